import random

import pytest
from hypothesis import settings, strategies as st

from daecc.kernels import load
from daecc.verify import GenParams, gen_program

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def brute_dominates(succ, entry, a, b):
    """a dominates b iff b cannot be reached from entry once a is removed."""
    if a == b:
        return True
    if a == entry:
        return True
    seen, work = {entry}, [entry]
    while work:
        n = work.pop()
        for s in succ[n]:
            if s != a and s not in seen:
                seen.add(s)
                work.append(s)
    return b not in seen


def all_paths(succ, src, dst, limit=10_000):
    out, stack = [], [(src, [src])]
    while stack:
        n, p = stack.pop()
        if n == dst:
            out.append(p)
            continue
        for s in succ[n]:
            if s not in p:
                stack.append((s, p + [s]))
        assert len(out) < limit
    return out


@pytest.fixture
def fig5():
    return load("fig5").function()


programs = st.builds(lambda seed, depth, lod: gen_program(GenParams(seed=seed, max_depth=depth, lod_rate=lod)),
                     st.integers(0, 10**6), st.integers(0, 3), st.sampled_from([0.0, 0.5, 1.0]))


def rand_inputs(prog, seed, count=2):
    rng = random.Random(seed)
    return [({a: [rng.randint(-4, 4) for _ in range(n)] for a, n in prog.array_sizes().items()},
             {"N": rng.randint(0, 5)}) for _ in range(count)]


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
