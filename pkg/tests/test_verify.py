import pytest

from daecc.ir import parse_program, print_program
from daecc.kernels import load
from daecc.pipeline import compile_function
from daecc.sim import run_dae
from daecc.verify import (GenParams, UnreachableRate, check_lemma1_static, differential_test, gen_inputs,
                          gen_program, kernel_inputs, misspec_sweep, nesting_sweep, random_suite, shrink)

from conftest import rand_inputs


def test_static_check_pass_and_empty():
    assert check_lemma1_static(compile_function(load("fig5").function())).ok
    assert check_lemma1_static(compile_function(load("fig1a").function())).ok


def test_differential_hist():
    prog = load("hist")
    mem, args = kernel_inputs("hist", 200, 0.5, seed=3)
    assert differential_test(prog.function(), [(mem, args)]).ok


def test_zero_trip():
    prog = load("fig5")
    mem, _ = rand_inputs(prog, 0)[0]
    v = differential_test(prog.function(), [(mem, {"N": 0})])
    assert v.ok and not v.skipped


def test_store_order_in_value_stream():
    prog = load("fig3")
    c = compile_function(prog.function())
    mem = {"A": [5] * 1024}  # every guard true: all three stores execute
    r = run_dae(c.pair, mem, {"N": 1})
    assert [s for s, _, q in r.lv["A"] if not q] == ["s2", "s0", "s1"]
    assert differential_test(prog.function(), [(mem, {"N": 20})]).ok


def test_generator_deterministic():
    a = print_program(gen_program(GenParams(seed=42, max_depth=3)))
    b = print_program(gen_program(GenParams(seed=42, max_depth=3)))
    assert a == b
    assert a != print_program(gen_program(GenParams(seed=43, max_depth=3)))


def test_depth_zero_is_straight_line():
    for seed in range(20):
        f = gen_program(GenParams(seed=seed, max_depth=0)).function()
        assert [b.id for b in f.blocks] == ["E", "B1", "B2", "B3", "X"]


def test_density_zero_has_no_memory_ops():
    for seed in range(20):
        prog = gen_program(GenParams(seed=seed, store_density=0.0))
        assert not any(i.op in ("load", "store") for i in prog.function().instructions())
        c = compile_function(prog.function())
        assert not any(i.op.startswith("send") for i in c.pair.agu.instructions())


def test_small_suite_both_modes():
    from daecc.pipeline import PipelineConfig
    for cfg in (PipelineConfig(), PipelineConfig(speculate=False)):
        rep = random_suite(30, 2, seed=5, cfg=cfg)
        assert rep.failures == [] and rep.total == 30


def test_failure_carries_reproducer():
    # a pipeline that forgets a poison must be caught with a replayable program
    prog = load("fig5")
    c = compile_function(prog.function())
    cu = c.pair.cu
    blk = next(b for b in cu.blocks if any(i.is_poison for i in b.instrs))
    blk.instrs.remove(next(i for i in blk.instrs if i.is_poison))
    v = check_lemma1_static(c)
    assert not v.ok and v.path


def test_shrink_keeps_failure():
    prog = gen_program(GenParams(seed=11, max_depth=2))
    text = print_program(prog)

    def fails(p):  # stand-in bug: any store to M1
        return any(i.op == "store" and i.array == "M1" for i in p.function().instructions())

    if not fails(prog):
        pytest.skip("seed has no M1 store")
    small = shrink(text, fails)
    assert fails(parse_program(small))
    assert len(small.splitlines()) < len(text.splitlines())


def test_misspec_rates_reached():
    res = misspec_sweep("hist", [0, 50, 100], n=200)
    assert [round(v["rate"], 2) for v in res["rows"].values()] == [0.0, 0.5, 1.0]
    with pytest.raises(UnreachableRate):
        misspec_sweep("hist", [50], n=7, tolerance=0.01)


def test_rate_zero_is_all_guards_true():
    mem, args = kernel_inputs("hist", 100, 0.0)
    assert all(x > 0 for x in mem["A"][:100])


@pytest.mark.parametrize("n,blocks,calls", [(1, 1, 1), (3, 3, 6)])
def test_nesting_examples(n, blocks, calls):
    r = nesting_sweep(n, iterations=50)
    assert (r["poisonBlocks"], r["poisonCalls"]) == (blocks, calls)
    assert r["specCycles"] > 0 and r["oracleCycles"] > 0


def test_gen_inputs_shape():
    prog = gen_program(GenParams(seed=1))
    ins = gen_inputs(prog, 3, 1)
    assert len(ins) == 3 and all(set(m) == set(prog.array_sizes()) for m, _ in ins)
