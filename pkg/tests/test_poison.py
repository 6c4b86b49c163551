import pytest
from hypothesis import given

from daecc.analysis import ensure_sites
from daecc.decouple import decouple
from daecc.ir import parse_program, validate_function
from daecc.kernels import load
from daecc.pipeline import PipelineConfig, compile_function
from daecc.poison import (check_lemma1, hoist_load_consumes, merge_poison_blocks, plan_poisons)
from daecc.speculate import SpecReqMap

from conftest import programs


@pytest.fixture(scope="module")
def three_src():
    return compile_function(load("fig5").function())


def _acts(c, spec):
    return {(tuple(a.edge), a.request) for a in c.plan.actions if a.spec_bb == spec}


def test_plan_edges(three_src):
    acts = _acts(three_src, "3")
    assert {(("3", "5"), "c"), (("3", "6"), "c"), (("5", "L"), "d"), (("5", "L"), "e")} <= acts


def test_kill_use_sequence_through_block6(three_src):
    trace = next(t for t in three_src.plan.traces["3"] if "6" in t["path"])
    kinds = [("use", e[1]) if e[0] == "use" else ("kill", e[2]) for e in trace["events"]]
    assert kinds == [("kill", "c"), ("kill", "b"), ("use", "6"), ("kill", "e")]


def test_placement_cases(three_src):
    cases = three_src.placement.cases()
    assert cases[("c", "3", ("3", "5"))] == 1
    assert cases[("d", "3", ("5", "7"))] == 2
    assert cases[("c", "3", ("3", "6"))] == 3
    cu = three_src.pair.cu
    head = [i for i in cu.block("6").instrs if not i.op == "phi"][:2]
    assert [(i.is_poison, i.site) for i in head] == [(True, "c"), (True, "b")]
    p = next(p for p in three_src.placement.placements if p.case == 2)
    steer = cu.block(p.blocks[0])
    assert steer.term.op == "condbr" and p.blocks[1] in steer.successors()


def test_empty_plan():
    f = ensure_sites(load("fig1a").function())
    cu = decouple(f, simplify=False).cu
    assert plan_poisons(cu, SpecReqMap()).actions == []
    assert merge_poison_blocks(cu)[1] == 0


def test_two_merges():
    c = compile_function(load("fig6").function(), PipelineConfig(merge=False))
    f = c.original
    assert check_lemma1(f, c.pair.agu, c.pair.cu).ok
    log = []
    merged, n = merge_poison_blocks(c.pair.cu, log)
    assert n == 2 and sorted(log) == [("10", "12"), ("11", "13")]
    assert check_lemma1(f, c.pair.agu, merged).ok


def test_no_merge_with_different_successors():
    text = """array @A[8]
func @f(%c) {
E:
  condbr %c, P, Q
P:
  produce_val @A, undef, 1 !s
  br M
Q:
  produce_val @A, undef, 1 !s
  br N
M:
  br N
N:
  ret
}"""
    f = parse_program(text).function()
    assert merge_poison_blocks(f)[1] == 0


def test_load_consume_hoisted_with_select():
    c = compile_function(load("hist").function())
    b = c.pair.cu.block("B")
    assert [i.site for i in b.instrs if i.op == "consume_val"] == ["x", "v"]
    assert not any(i.op == "consume_val" for i in c.pair.cu.block("T").instrs)


def test_consume_hoist_identity_without_loads():
    f = ensure_sites(load("fig5").function())
    cu = decouple(f, simplify=False).cu
    assert [str(i) for i in hoist_load_consumes(cu, SpecReqMap()).instructions()] == \
        [str(i) for i in cu.instructions()]


def test_mutation_deleting_poison_fails(three_src):
    cu = three_src.pair.cu.copy()
    blk = next(b for b in cu.blocks if any(i.is_poison for i in b.instrs))
    victim = next(i for i in blk.instrs if i.is_poison)
    blk.instrs.remove(victim)
    v = check_lemma1(three_src.original, three_src.pair.agu, cu)
    assert not v.ok and v.path


def test_static_check_passes(three_src):
    assert three_src.check.ok


@given(programs)
def test_pipeline_keeps_lemma(prog):
    c = compile_function(prog.function())
    assert c.check.ok or c.check.skipped
    assert validate_function(c.pair.cu, prog.array_sizes()) == []
    assert validate_function(c.pair.agu, prog.array_sizes()) == []


GUARDED_LOAD = """array @A[64]
array @idx[64]
func @f(%N) {
E:
  br H
H:
  %i = phi [0, E], [%i1, L]
  %c = icmp lt %i, %N
  condbr %c, B, X
B:
  %x = load @A[%i]
  %j = load @idx[%i]
  %p = icmp gt %x, 0
  condbr %p, T, L
T:
  %v = load @A[%j]
  br L
L:
  %w = phi [%v, T], [0, B]
  %k = add %i, 32
  store @A[%k], %w
  %i1 = add %i, 1
  br H
X:
  ret
}
"""


def test_guarded_load_phi_becomes_select():
    c = compile_function(parse_program(GUARDED_LOAD).function())
    cu = c.pair.cu
    assert not any(i.op == "phi" for b in cu.blocks if b.id == "L" for i in b.instrs)
    sel = next(i for i in cu.instructions() if i.op == "select")
    assert sel.args[0] == "%p"
    assert [i.site for i in cu.block("B").instrs if i.op == "consume_val"] == ["A0", "A1"]
