import pytest
from hypothesis import given, settings, strategies as st

from daecc.ir import parse_program
from daecc.kernels import load
from daecc.pipeline import PipelineConfig, compile_function
from daecc.sim import (UNDEF_WORD, SimConfig, SimError, memory_from_json, pipeline_report, run_dae,
                       run_reference)
from daecc.verify import differential_test, kernel_inputs

from conftest import programs, rand_inputs

HIST = load("hist")


def _hist_mem(a, idx):
    mem, _ = memory_from_json({"arrays": {"A": a, "idx": idx}}, HIST)
    return mem


def test_reference_guard_never_taken():
    mem = _hist_mem([-1] * 10, list(range(10)))
    assert run_reference(HIST.function(), mem, {"N": 10}).stores.get("A", []) == []


def test_reference_hand_executed():
    t = run_reference(HIST.function(), _hist_mem([1, -1], [0, 1]), {"N": 2})
    assert [(a, s) for s, a, _ in t.stores["A"]] == [(0, "s")]


def test_reference_empty_function():
    f = parse_program("func @f() { e: ret }").function()
    t = run_reference(f, {}, {})
    assert t.stores == {} and t.memory == {}


def test_reference_errors():
    with pytest.raises(SimError) as e:
        run_reference(HIST.function(), _hist_mem([1], [5000]), {"N": 1})
    assert e.value.code == "OUT-OF-BOUNDS"
    spin = parse_program("func @f() {\nE:\n  br H\nH:\n  br H\n}").function()
    with pytest.raises(SimError) as e:
        run_reference(spin, {}, {}, budget=1000)
    assert e.value.code == "NON-TERMINATION"


def test_empty_program_zero_cycles():
    c = compile_function(parse_program("func @f() { e: ret }").function())
    r = run_dae(c.pair, {}, {})
    assert r.cycles == 0 and r.termination == "completed"


def test_round_trip_bound_closed_form():
    # without speculation the AGU waits for the guard value every iteration:
    # 7 issue slots plus the load latency L
    n, lat = 100, 8
    mem, args = kernel_inputs("hist", n, 0.0)
    c = compile_function(HIST.function(), PipelineConfig(speculate=False))
    r = run_dae(c.pair, mem, args, SimConfig(mem_latency=lat))
    assert abs(r.cycles - n * (lat + 7)) <= 15
    assert r.stalls["agu"]["branch-wait"] >= n * (lat - 2)


def test_speculation_removes_agu_wait():
    mem, args = kernel_inputs("hist", 100, 0.5)
    spec = run_dae(compile_function(HIST.function()).pair, mem, args)
    dae = run_dae(compile_function(HIST.function(), PipelineConfig(speculate=False)).pair, mem, args)
    assert spec.stalls["agu"]["branch-wait"] == 0 < dae.stalls["agu"]["branch-wait"]
    assert spec.memory == dae.memory
    assert "cycles" in pipeline_report(spec)


def test_compute_free_loop_has_no_raw_wait():
    c = compile_function(load("pure").function())
    r = run_dae(c.pair, {}, {"N": 50})
    assert r.stalls["du"]["raw-wait"] == 0


def test_deterministic():
    mem, args = kernel_inputs("mm", 200, 0.3)
    c = compile_function(load("mm").function())
    assert run_dae(c.pair, mem, args).to_json() == run_dae(c.pair, mem, args).to_json()


def test_poisoned_out_of_range_store_does_not_fault():
    n = 50
    a = [1 if k % 2 else -1 for k in range(n)]
    idx = [k if k % 2 else 100_000 for k in range(n)]  # wild index only where the guard fails
    mem = _hist_mem(a, idx)
    ref = run_reference(HIST.function(), mem, {"N": n})
    r = run_dae(compile_function(HIST.function()).pair, mem, {"N": n})
    assert r.termination == "completed" and r.memory == ref.memory
    assert r.oob_loads == n // 2 and r.poisoned == n // 2


@pytest.mark.parametrize("fifo,lsq", [(1, (1, 1)), (2, (1, 4)), (64, (8, 64))])
def test_tight_resources_complete(fifo, lsq):
    mem, args = kernel_inputs("hist", 100, 0.4)
    cfg = SimConfig(fifo_depth=fifo, lsq_loads=lsq[0], lsq_stores=lsq[1])
    for k in ("hist", "thr", "fig5"):
        c = compile_function(load(k).function())
        if k != "hist":
            mem, args = (kernel_inputs(k, 100, 0.4) if k == "thr" else rand_inputs(load(k), 1)[0])
        ref = run_reference(c.original, mem, args)
        r = run_dae(c.pair, mem, args, cfg)
        assert r.termination == "completed" and r.memory == ref.memory


def test_bad_config():
    with pytest.raises(ValueError):
        SimConfig(fifo_depth=0)


@settings(max_examples=25)
@given(programs, st.integers(0, 1000))
def test_differential_generated(prog, seed):
    v = differential_test(prog.function(), rand_inputs(prog, seed), program=prog)
    assert v.ok, v.reason


def test_no_undef_in_memory():
    mem, args = kernel_inputs("hist", 300, 0.7)
    r = run_dae(compile_function(HIST.function()).pair, mem, args)
    assert all(UNDEF_WORD not in vals for vals in r.memory.values())
