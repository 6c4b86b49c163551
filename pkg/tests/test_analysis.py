from hypothesis import given

from daecc.analysis import (CFG, LodConfig, control_dependence, dominator_tree, ensure_sites, forward_successors,
                            lod_analysis, loop_info, post_dominator_tree, region_rpo, reachable_fwd)
from daecc.ir import parse_program
from daecc.kernels import load

from conftest import brute_dominates, programs


def _f(text):
    return parse_program(text).function()


CHAIN = "func @f() {\nA:\n  br B\nB:\n  br C\nC:\n  ret\n}"
DIAMOND = "func @f(%c) {\nA:\n  condbr %c, B, C\nB:\n  br D\nC:\n  br D\nD:\n  ret\n}"


def test_idom_chain_and_diamond():
    assert dominator_tree(_f(CHAIN)).idom["C"] == "B"
    assert dominator_tree(_f(CHAIN)).idom["B"] == "A"
    assert dominator_tree(_f(DIAMOND)).idom["D"] == "A"


def test_idom_through_two_paths(fig5):
    assert dominator_tree(fig5).idom["5"] == "1"


@given(programs)
def test_dominators_match_brute_force(prog):
    f = prog.function()
    succ = f.successors()
    dom = dominator_tree(f)
    ids = [b.id for b in f.blocks]
    for a in ids:
        for b in ids:
            assert dom.dominates(a, b) == brute_dominates(succ, f.entry, a, b), (a, b)


def _brute_postdom(fsucc, y, s):
    """every forward path from s to a sink passes through y"""
    if y == s:
        return True
    seen, work = {s}, [s]
    while work:
        n = work.pop()
        if not fsucc[n]:
            return False
        for t in fsucc[n]:
            if t != y and t not in seen:
                seen.add(t)
                work.append(t)
    return True


@given(programs)
def test_postdominators_match_brute_force(prog):
    f = prog.function()
    fs = forward_successors(f)
    pdt = post_dominator_tree(f)
    for a in fs:
        for b in fs:
            assert pdt.dominates(a, b) == _brute_postdom(fs, a, b), (a, b)


@given(programs)
def test_control_dependence_definition(prog):
    # y is control dependent on edge (x, s) iff y post-dominates s and does not strictly post-dominate x
    f = prog.function()
    fs = forward_successors(f)
    cd = control_dependence(f)
    for x, succ in fs.items():
        for s in succ:
            for y in fs:
                want = _brute_postdom(fs, y, s) and not (y != x and _brute_postdom(fs, y, x))
                assert ((x, s) in cd[y]) == want, (x, s, y)


def test_control_dependence_examples(fig5):
    cd = control_dependence(_f(DIAMOND))
    assert cd["B"] == {("A", "B")} and cd["C"] == {("A", "C")}
    assert ("3", "4") in control_dependence(fig5)["4"]
    hist = load("hist").function()
    assert any(u == "B" for u, _ in control_dependence(hist)["T"])


def test_loops(fig5):
    li = loop_info(fig5)
    assert list(li.loops) == ["H"]
    lp = li.loops["H"]
    assert lp.latch == "L" and lp.body == set("1234567") | {"H", "L"}
    nested = load("nest2")
    assert list(loop_info(nested.function()).loops) == ["H"]


def test_nested_loop_parent():
    text = """func @f(%N) {
E:
  br H
H:
  %i = phi [0, E], [%i1, L]
  %c = icmp lt %i, %N
  condbr %c, P, X
P:
  br G
G:
  %j = phi [0, P], [%j1, M]
  %d = icmp lt %j, %N
  condbr %d, M, L
M:
  %j1 = add %j, 1
  br G
L:
  %i1 = add %i, 1
  br H
X:
  ret
}"""
    li = loop_info(_f(text))
    assert li.loops["G"].parent == "H" and li.loops["H"].parent is None


def test_region_order(fig5):
    assert region_rpo(fig5, "3") == ["3", "4", "5", "6", "7", "L"]
    assert region_rpo(fig5, "2") == ["2", "5", "7", "L"]
    assert region_rpo(fig5, "L") == ["L"]


def test_reachable_fwd(fig5):
    assert reachable_fwd(fig5, "3", "4")
    assert not reachable_fwd(fig5, "6", "5")
    assert reachable_fwd(fig5, "7", "7")


@given(programs)
def test_region_is_topological(prog):
    f = prog.function()
    info = CFG(f)
    for src in info.fsucc:
        order, _ = info.region(src)
        pos = {b: k for k, b in enumerate(order)}
        for u in order:
            for v in info.fsucc[u]:
                if v in pos:
                    assert pos[u] < pos[v]


def test_lod_chains_and_heads(fig5):
    rep = lod_analysis(ensure_sites(fig5))
    assert sorted(rep.chains) == [("2", "5"), ("3", "5")]
    assert rep.chain_heads == ["2", "3"]


def test_lod_hist_single_source():
    rep = lod_analysis(ensure_sites(load("hist").function()))
    assert rep.sources == ["B"] and rep.chain_heads == ["B"]


def test_lod_data_dependency_through_phi():
    text = """array @A[64]
func @f(%N) {
E:
  br H
H:
  %k = phi [0, E], [%k1, L]
  %i = phi [0, E], [%i2, L]
  %c = icmp lt %k, %N
  condbr %c, B, X
B:
  %x = load @A[%i]
  condbr %x, T, L
T:
  store @A[%i], 1
  %i1 = add %i, 1
  br L
L:
  %i2 = phi [%i, B], [%i1, T]
  %k1 = add %k, 1
  br H
X:
  ret
}"""
    rep = lod_analysis(ensure_sites(_f(text)))
    assert len(rep.data_deps) == 1
    assert "%i2" in rep.data_deps[0][2]


def test_no_lod_when_guard_array_never_stored():
    rep = lod_analysis(ensure_sites(load("fig1a").function()))
    assert rep.chain_heads == [] and rep.control_deps == []


def test_policy_all_loads_is_wider(fig5):
    narrow = lod_analysis(ensure_sites(load("fig1a").function()), LodConfig("same-array"))
    wide = lod_analysis(ensure_sites(load("fig1a").function()), LodConfig("all-loads"))
    assert len(wide.control_deps) >= len(narrow.control_deps)
