"""Dominance, control dependence, loops, region orders and the loss-of-decoupling classifier."""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .ir import Function, is_value, label_key

VIRTUAL_EXIT = "<exit>"


@dataclass
class DomTree:
    idom: dict
    root: str

    def dominates(self, a: str, b: str) -> bool:
        """Reflexive dominance (post-dominance for a post-dominator tree)."""
        while True:
            if a == b:
                return True
            parent = self.idom.get(b)
            if parent is None or parent == b:
                return False
            b = parent

    def children(self) -> dict:
        out = {n: [] for n in self.idom}
        for n, p in self.idom.items():
            if n != p:
                out[p].append(n)
        for v in out.values():
            v.sort(key=label_key)
        return out


def _rpo(succ: dict, root: str) -> list:
    seen, post = {root}, []
    stack = [(root, iter(sorted(succ.get(root, ()), key=label_key)))]
    while stack:
        node, it = stack[-1]
        for s in it:
            if s not in seen:
                seen.add(s)
                stack.append((s, iter(sorted(succ.get(s, ()), key=label_key))))
                break
        else:
            post.append(node)
            stack.pop()
    return post[::-1]


def _idoms(succ: dict, root: str) -> dict:
    """Cooper-Harvey-Kennedy iterative immediate dominators."""
    order = _rpo(succ, root)
    index = {n: i for i, n in enumerate(order)}
    preds = {n: [] for n in order}
    for u in order:
        for v in succ.get(u, ()):
            if v in preds:
                preds[v].append(u)
    idom = {root: root}

    def intersect(a, b):
        while a != b:
            while index[a] > index[b]:
                a = idom[a]
            while index[b] > index[a]:
                b = idom[b]
        return a

    changed = True
    while changed:
        changed = False
        for n in order[1:]:
            ps = [p for p in preds[n] if p in idom]
            new = ps[0]
            for p in ps[1:]:
                new = intersect(p, new)
            if idom.get(n) != new:
                idom[n] = new
                changed = True
    return idom


def dominator_tree(f: Function) -> DomTree:
    return DomTree(_idoms(f.successors(), f.entry), f.entry)


def forward_successors(f: Function, loops: Optional["LoopInfo"] = None) -> dict:
    back = set((loops or loop_info(f)).backedges)
    return {b.id: [s for s in dict.fromkeys(b.successors()) if (b.id, s) not in back] for b in f.blocks}


def post_dominator_tree(f: Function, forward: bool = True) -> DomTree:
    """Post-dominators rooted at a virtual exit.

    With ``forward=True`` backedges are dropped, so a latch flows into the
    virtual exit; this scopes post-dominance to a single loop iteration.
    """
    succ = forward_successors(f) if forward else f.successors()
    rev = {VIRTUAL_EXIT: []}
    for b in f.blocks:
        rev.setdefault(b.id, [])
    for u, vs in succ.items():
        if not vs:
            rev[VIRTUAL_EXIT].append(u)
        for v in vs:
            rev[v].append(u)
    return DomTree(_idoms(rev, VIRTUAL_EXIT), VIRTUAL_EXIT)


def control_dependence(f: Function) -> dict:
    """Map block -> set of (branch block, successor taken) it is control dependent on."""
    pdt = post_dominator_tree(f)
    succ = forward_successors(f)
    cd = {b.id: set() for b in f.blocks}
    for u, vs in succ.items():
        for v in vs:
            if pdt.dominates(v, u) and v != u:
                continue
            stop = pdt.idom[u]
            w = v
            while w != stop and w != VIRTUAL_EXIT:
                cd[w].add((u, v))
                w = pdt.idom[w]
    return cd


@dataclass
class Loop:
    header: str
    latch: str
    body: set
    parent: Optional[str] = None  # header of enclosing loop

    @property
    def depth_key(self):
        return len(self.body)


@dataclass
class LoopInfo:
    loops: dict  # header -> Loop
    backedges: list

    def innermost(self, block: str) -> Optional[Loop]:
        best = None
        for lp in self.loops.values():
            if block in lp.body and (best is None or len(lp.body) < len(best.body)):
                best = lp
        return best

    def headers(self) -> set:
        return set(self.loops)

    def exits(self, header: str, f: Function) -> list:
        lp = self.loops[header]
        return [(u, v) for u, v in f.edges() if u in lp.body and v not in lp.body]


def loop_info(f: Function) -> LoopInfo:
    dom = dominator_tree(f)
    succ = f.successors()
    preds = f.predecessors()
    back = [(u, v) for u in succ for v in dict.fromkeys(succ[u]) if dom.dominates(v, u)]
    loops = {}
    for u, h in back:
        body = {h, u}
        work = [u]
        while work:
            n = work.pop()
            if n == h:
                continue
            for p in preds[n]:
                if p not in body:
                    body.add(p)
                    work.append(p)
        if h in loops:
            loops[h].body |= body
            loops[h].latch = "<multiple>"
        else:
            loops[h] = Loop(h, u, body)
    for h, lp in loops.items():
        parents = [o for o in loops.values() if o.header != h and h in o.body and lp.body <= o.body]
        if parents:
            lp.parent = min(parents, key=lambda o: len(o.body)).header
    return LoopInfo(loops, back)


class CFG:
    """Cached structural facts about one function."""

    def __init__(self, f: Function):
        self.f = f
        self.loops = loop_info(f)
        self.dom = dominator_tree(f)
        self.fsucc = forward_successors(f, self.loops)
        self.fpred = {b: [] for b in self.fsucc}
        for u, vs in self.fsucc.items():
            for v in vs:
                self.fpred[v].append(u)
        self._reach = {}

    def reach_set(self, src: str) -> set:
        r = self._reach.get(src)
        if r is None:
            r = {src}
            work = [src]
            while work:
                n = work.pop()
                for s in self.fsucc[n]:
                    if s not in r:
                        r.add(s)
                        work.append(s)
            self._reach[src] = r
        return r

    def reachable(self, a: str, b: str) -> bool:
        return b in self.reach_set(a)

    def loop_scope(self, block: str) -> set:
        lp = self.loops.innermost(block)
        return set(lp.body) if lp else set(self.fsucc)

    def region(self, src: str):
        """Blocks reachable from ``src`` inside its innermost loop without entering inner loops.

        Returns ``(topological order, inner loop headers that were skipped)``.
        """
        lp = self.loops.innermost(src)
        scope = set(lp.body) if lp else set(self.fsucc)
        headers = self.loops.headers()
        own = lp.header if lp else None
        nodes, skipped = {src}, set()
        work = [src]
        while work:
            n = work.pop()
            for s in self.fsucc[n]:
                if s not in scope:
                    continue
                if s in headers and s != own:
                    skipped.add(s)
                    continue
                if s not in nodes:
                    nodes.add(s)
                    work.append(s)
        indeg = {n: 0 for n in nodes}
        for n in nodes:
            for s in self.fsucc[n]:
                if s in nodes:
                    indeg[s] += 1
        heap = [(label_key(n), n) for n in nodes if indeg[n] == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            _, n = heapq.heappop(heap)
            order.append(n)
            for s in self.fsucc[n]:
                if s in nodes:
                    indeg[s] -= 1
                    if indeg[s] == 0:
                        heapq.heappush(heap, (label_key(s), s))
        return order, skipped


def region_rpo(f: Function, src: str) -> list:
    """Topological order of the forward DAG region from ``src`` to the end of its loop."""
    return CFG(f).region(src)[0]


def reachable_fwd(f: Function, a: str, b: str) -> bool:
    return CFG(f).reachable(a, b)


# ---------------------------------------------------------------- loss of decoupling

POLICIES = ("all-loads", "same-array", "all-branch-feeding-loads")


@dataclass
class LodConfig:
    policy: str = "same-array"

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown load-set policy {self.policy!r}")


@dataclass
class LodReport:
    policy: str
    data_deps: list = field(default_factory=list)     # (g site, a site, def-use path)
    control_deps: list = field(default_factory=list)  # (g site, srcBB, branch block)
    chains: list = field(default_factory=list)        # (source, nested source)
    chain_heads: list = field(default_factory=list)
    g_set: list = field(default_factory=list)
    a_set: list = field(default_factory=list)
    cross_loop: list = field(default_factory=list)    # (g site, srcBB) pairs crossing loop levels
    exit_branches: list = field(default_factory=list)  # sources whose branch leaves the loop
    residual: dict = field(default_factory=dict)      # srcBB -> reason it is not speculated

    @property
    def sources(self) -> list:
        return sorted({s for _, s, _ in self.control_deps}, key=label_key)

    def to_json(self) -> dict:
        return {
            "policy": self.policy,
            "dataDeps": [{"g": g, "a": a, "path": p} for g, a, p in self.data_deps],
            "controlDeps": [{"g": g, "srcBB": s, "branch": b} for g, s, b in self.control_deps],
            "chains": [list(c) for c in self.chains],
            "chainHeads": list(self.chain_heads),
            "G": list(self.g_set),
            "A": list(self.a_set),
            "crossLoop": [list(c) for c in self.cross_loop],
            "exitBranches": list(self.exit_branches),
            "residual": dict(self.residual),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def ensure_sites(f: Function) -> Function:
    """Copy of ``f`` where every load/store carries a unique request-site tag."""
    g = f.copy()
    taken = {i.site for i in g.instructions() if i.site is not None}
    counters = {}
    for ins in g.instructions():
        if ins.op in ("load", "store") and ins.site is None:
            k = counters.get(ins.array, 0)
            while f"{ins.array}{k}" in taken:
                k += 1
            ins.site = f"{ins.array}{k}"
            taken.add(ins.site)
            counters[ins.array] = k + 1
    return g


def _backward_slice(defs: dict, roots: list) -> dict:
    """BFS over operands; returns value -> parent value (for path recovery)."""
    parent = {}
    work = deque()
    for r in roots:
        if is_value(r) and r not in parent:
            parent[r] = None
            work.append(r)
    while work:
        v = work.popleft()
        _, ins = defs.get(v, (None, None))
        if ins is None:
            continue
        for a in ins.uses():
            if a not in parent:
                parent[a] = v
                work.append(a)
    return parent


def _path(parent: dict, v: str) -> list:
    out = [v]
    while parent.get(out[-1]) is not None:
        out.append(parent[out[-1]])
    return out


def lod_analysis(f: Function, cfg: Optional[LodConfig] = None) -> LodReport:
    """Classify loss-of-decoupling data and control dependencies of ``f``."""
    cfg = cfg or LodConfig()
    f = ensure_sites(f)
    info = CFG(f)
    defs = f.definitions()
    bmap = f.block_map()
    where = {}
    requests = []
    for b in f.blocks:
        for ins in b.instrs:
            if ins.op in ("load", "store"):
                requests.append(ins)
                where[ins.site] = b.id
    stored = {i.array for i in requests if i.op == "store"}
    loads = [i for i in requests if i.op == "load" and i.array in stored]
    load_by_dest = {i.dest: i for i in loads}

    def branch_roots(bid):
        t = bmap[bid].term
        return t.uses() if t.op in ("condbr", "switch") else []

    feeding = set()
    for b in f.blocks:
        sl = _backward_slice(defs, branch_roots(b.id))
        feeding |= {load_by_dest[v].site for v in sl if v in load_by_dest}

    def a_set(g):
        if cfg.policy == "same-array":
            return {i.dest for i in loads if i.array == g.array and i is not g}
        if cfg.policy == "all-branch-feeding-loads":
            return {i.dest for i in loads if i.site in feeding and i is not g}
        return {i.dest for i in loads if i is not g}

    rep = LodReport(cfg.policy)
    g_vals = set()
    a_all = set()
    cd = control_dependence(f)
    for g in requests:
        A = a_set(g)
        a_all |= {load_by_dest[v].site for v in A}
        addr_slice = _backward_slice(defs, [g.args[0]])
        g_vals |= {v for v in addr_slice if defs.get(v, (None, None))[1] is not None}
        found = set()
        for v in addr_slice:
            if v in A and v not in found:
                found.add(v)
                rep.data_deps.append((g.site, load_by_dest[v].site, _path(addr_slice, v)))
        # terminators of the incoming blocks of phis on the address chain
        for v in list(addr_slice):
            _, ins = defs.get(v, (None, None))
            if ins is None or ins.op != "phi":
                continue
            for pb in ins.labels:
                tsl = _backward_slice(defs, branch_roots(pb))
                for a in tsl:
                    if a in A and a not in found:
                        found.add(a)
                        rep.data_deps.append((g.site, load_by_dest[a].site, _path(addr_slice, v) + [f"term:{pb}"]))
        # control dependencies, transitively, within g's innermost loop
        gb = where[g.site]
        lp = info.loops.innermost(gb)
        seen = set()
        work = [gb]
        while work:
            n = work.pop()
            for c, _ in cd[n]:
                if c in seen:
                    continue
                seen.add(c)
                clp = info.loops.innermost(c)
                same_level = (clp is lp) or (clp is not None and lp is not None and clp.header == lp.header)
                csl = _backward_slice(defs, branch_roots(c))
                if any(v in A for v in csl):
                    if same_level:
                        rep.control_deps.append((g.site, c, c))
                    else:
                        rep.cross_loop.append((g.site, c))
                if same_level:
                    work.append(c)
    rep.g_set = sorted(g_vals | {r.site for r in requests})
    rep.a_set = sorted(a_all)
    rep.control_deps.sort(key=lambda t: (label_key(t[1]), t[0]))

    sources = rep.sources
    for s in sources:
        lp = info.loops.innermost(s)
        scope = lp.body if lp else set(info.fsucc)
        if any(t not in scope or (lp and t == lp.header) for t in bmap[s].successors()):
            rep.exit_branches.append(s)
    # nested sources: s2 transitively control dependent on s1 within the loop
    closure = {}
    for s in sources:
        seen = set()
        work = [s]
        while work:
            n = work.pop()
            for c, _ in cd[n]:
                if c not in seen and info.loop_scope(c) == info.loop_scope(s):
                    seen.add(c)
                    work.append(c)
        closure[s] = seen
    for s2 in sources:
        for s1 in sources:
            if s1 != s2 and s1 in closure[s2]:
                rep.chains.append((s1, s2))
    dests = {d for _, d in rep.chains}
    rep.chain_heads = [s for s in sources if s not in dests]
    return rep
