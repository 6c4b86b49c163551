from hypothesis import given

from daecc.analysis import ensure_sites
from daecc.decouple import cleanup, dce, decouple
from daecc.ir import parse_program, validate_function
from daecc.kernels import load

from conftest import programs


def _ops(f, block):
    return [(i.op, i.array) for i in f.block(block).instrs]


def _fn(name):
    return ensure_sites(load(name).function())


def test_unstored_guard_split():
    pair = decouple(_fn("fig1a"))
    agu, cu = pair.agu, pair.cu
    assert ("send_ld_addr", "C") in _ops(agu, "B")
    sends = [(i.op, i.array) for i in agu.instructions() if i.op.startswith("send")]
    assert sends == [("send_ld_addr", "C"), ("send_ld_addr", "idx"), ("send_ld_addr", "A"), ("send_st_addr", "A")]
    assert not any(i.op == "opaque" for i in agu.instructions())
    consumed = {i.array for i in cu.instructions() if i.op == "consume_val"}
    assert consumed == {"C", "A"}
    assert ("produce_val", "A") in _ops(cu, "T")


def test_stored_guard_keeps_branch_in_agu():
    pair = decouple(_fn("fig1b"))
    # guard load, index load, update load, store
    assert list(pair.sites) == ["x", "j", "v", "s"]
    b = pair.agu.block("B")
    assert b.term.op == "condbr"
    assert any(i.op == "consume_val" and i.array == "A" for i in b.instrs)
    assert pair.sites["x"].agu_value and pair.sites["x"].cu_value


def test_pure_loop():
    f = _fn("pure")
    pair = decouple(f)
    assert [b.id for b in pair.agu.blocks] == ["E"]
    assert pair.agu.block("E").term.op == "ret"
    assert [str(i) for i in pair.cu.instructions()] == [str(i) for i in dce(f).instructions()]


def test_dce_removes_unused():
    f = parse_program("func @f() {\nE:\n  %x = add 1, 2\n  ret\n}").function()
    assert list(dce(f).instructions())[:-1] == []


def test_cleanup_folds_empty_block():
    text = "func @f(%c) {\nA:\n  condbr %c, B, C\nB:\n  br M\nM:\n  br C\nC:\n  ret\n}"
    f = cleanup(parse_program(text).function(), merge=True)
    assert len(f.blocks) < 4
    assert validate_function(f) == []


@given(programs)
def test_slices_are_valid_and_balanced(prog):
    pair = decouple(ensure_sites(prog.function()))
    for f in (pair.agu, pair.cu):
        assert validate_function(f, prog.array_sizes()) == []
    # no memory ops survive in either slice
    assert not any(i.op in ("load", "store") for f in (pair.agu, pair.cu) for i in f.instructions())
    agu_st = {i.site for i in pair.agu.instructions() if i.op == "send_st_addr"}
    cu_st = {i.site for i in pair.cu.instructions() if i.op == "produce_val"}
    assert agu_st == cu_st
