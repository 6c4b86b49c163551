"""Hoist AGU requests out of control-dependent regions (speculative requests)."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

from .analysis import CFG
from .ir import Function, Instruction, is_value, label_key
from .paths import PathLimitError, Verdict, ends_in_exit, iteration_paths, loop_start, walk

REQUEST_OPS = ("send_ld_addr", "send_st_addr")
HOISTABLE_OPS = {"const", "add", "sub", "mul", "icmp", "select", "opaque"}


class SpeculationError(Exception):
    def __init__(self, code: str, message: str, heads=()):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.heads = list(heads)


@dataclass
class SpecRequest:
    id: str  # request site
    true_bb: str
    array: str
    kind: str  # "load" | "store"

    def to_json(self) -> dict:
        return {"id": self.id, "trueBB": self.true_bb, "array": self.array, "kind": self.kind}


@dataclass
class SpecReqMap:
    """specBB -> requests hoisted into it, in hoisted order."""

    entries: dict = field(default_factory=dict)

    def __getitem__(self, bb):
        return self.entries[bb]

    def __contains__(self, bb):
        return bb in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def ids(self, bb) -> list:
        return [r.id for r in self.entries.get(bb, ())]

    def sites(self) -> set:
        return {r.id for rs in self.entries.values() for r in rs}

    def spec_blocks_of(self, site) -> list:
        return [bb for bb, rs in self.entries.items() if any(r.id == site for r in rs)]

    def to_json(self) -> dict:
        return {bb: [r.to_json() for r in rs] for bb, rs in self.entries.items()}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def topo_order(info: CFG) -> list:
    """Topological order of the forward CFG, ties broken by label."""
    indeg = {n: len(p) for n, p in info.fpred.items()}
    heap = [(label_key(n), n) for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    out = []
    while heap:
        _, n = heapq.heappop(heap)
        out.append(n)
        for s in info.fsucc[n]:
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(heap, (label_key(s), s))
    return out


def _requests(f: Function, bid: str) -> list:
    return [i for i in f.block(bid).instrs if i.op in REQUEST_OPS]


def hoist_requests(agu: Function, chain_heads) -> tuple:
    """Move every request of each head's region to the end of the head block.

    Heads are visited in topological order and the blocks of each region in
    topological order, so the hoisted requests keep program order. The
    head's own requests are already unconditional and stay where they are.
    Returns ``(new agu, SpecReqMap)``.
    """
    info = CFG(agu)
    rank = {b: k for k, b in enumerate(topo_order(info))}
    heads = sorted(dict.fromkeys(chain_heads), key=lambda b: rank[b])
    regions = {}
    for h in heads:
        order, skipped = info.region(h)
        scope = info.loop_scope(h)
        for s in sorted(skipped, key=label_key):
            beyond = info.reach_set(s) & scope
            if any(_requests(agu, b) for b in beyond):
                raise SpeculationError("REQUEST-IN-INNER-LOOP",
                                       f"region of {h} reaches requests through inner loop {s}", [h])
        regions[h] = order
    for a in heads:
        for b in heads:
            if a != b and info.reachable(a, b):
                shared = set(regions[a][1:]) & set(regions[b][1:])
                if any(_requests(agu, x) for x in shared):
                    raise SpeculationError("MULTI-SOURCE-CO-OCCURRENCE",
                                           f"sources {a} and {b} share requests on one path", [a, b])
    out = agu.copy()
    bmap = out.block_map()
    defs = out.definitions()
    smap = SpecReqMap()
    moved = set()
    taken = set(defs)
    for h in heads:
        reqs = smap.entries.setdefault(h, [])
        clones = {}

        def avail(v):
            # value usable at the end of h: clone its pure slice when defined below h
            if not is_value(v):
                return v
            where, ins = defs.get(v, (None, None))
            if ins is None or info.dom.dominates(where, h):
                return v
            if v in clones:
                return clones[v]
            if ins.op not in HOISTABLE_OPS:
                raise SpeculationError("ADDRESS-NOT-HOISTABLE",
                                       f"address of a request below {h} depends on {ins.op} {v}", [h])
            args = [avail(a) for a in ins.args]
            k = 0
            while f"{v}.h{h}.{k}" in taken:
                k += 1
            name = f"{v}.h{h}.{k}"
            taken.add(name)
            bmap[h].instrs.append(Instruction(ins.op, dest=name, args=args, cc=ins.cc, func=ins.func))
            clones[v] = name
            return name

        for bid in regions[h][1:]:
            for ins in _requests(agu, bid):
                addr = avail(ins.args[0])
                bmap[h].instrs.append(Instruction(ins.op, args=[addr], array=ins.array, site=ins.site))
                kind = "load" if ins.op == "send_ld_addr" else "store"
                reqs.append(SpecRequest(ins.site, bid, ins.array, kind))
                moved.add(bid)
    for bid in moved:
        bmap[bid].instrs = [i for i in bmap[bid].instrs if i.op not in REQUEST_OPS]
    smap.entries = {h: rs for h, rs in smap.entries.items() if rs}
    return out, smap


def coverage_gaps(info: CFG, smap: SpecReqMap) -> list:
    """Hoisted requests whose trueBB can be reached from the loop start without
    passing through one of their hoist blocks. Returns ``(site, trueBB)`` pairs."""
    gaps = []
    done = set()
    for rs in smap.entries.values():
        for r in rs:
            if (r.id, r.true_bb) in done:
                continue
            done.add((r.id, r.true_bb))
            hoists = set(smap.spec_blocks_of(r.id))
            start = loop_start(info, r.true_bb)
            if start in hoists:
                continue
            scope = info.loop_scope(r.true_bb)
            seen = {start}
            work = [start]
            while work:
                n = work.pop()
                if n == r.true_bb:
                    gaps.append((r.id, r.true_bb))
                    break
                for s in info.fsucc[n]:
                    if s in scope and s not in seen and s not in hoists:
                        seen.add(s)
                        work.append(s)
    return gaps


def validate_speculation(orig: Function, spec: Function, smap: SpecReqMap, path_limit: int = 100_000) -> Verdict:
    """Check on every forward iteration path that each request executed by the
    original AGU is sent exactly once by the transformed AGU, in the same
    relative order per array, and that any extra request is a hoisted one."""
    info = CFG(orig)
    starts = sorted({loop_start(info, bb) for bb in smap}, key=label_key)
    original = {b.id for b in orig.blocks}
    hoisted = smap.sites()
    for st in starts:
        try:
            paths = iteration_paths(info, st, path_limit)
        except PathLimitError as e:
            return Verdict(True, reason=str(e), skipped=True)
        for p in paths:
            ex = ends_in_exit(info, p)
            want = [(a, s) for op, a, s, _ in walk(orig, p, original, ex) if op in REQUEST_OPS]
            got = [(a, s) for op, a, s, _ in walk(spec, p, original, ex) if op in REQUEST_OPS]
            for arr in {a for a, _ in want} | {a for a, _ in got}:
                w = [s for a, s in want if a == arr]
                g = [s for a, s in got if a == arr]
                bad = None
                if len(set(g)) != len(g):
                    bad = "request sent twice"
                elif [s for s in g if s in w] != w:
                    bad = "original request missing or reordered"
                elif any(s not in w and s not in hoisted for s in g):
                    bad = "unexpected request"
                if bad:
                    return Verdict(False, reason=bad, path=p, detail={"array": arr, "original": w, "speculative": g})
    return Verdict(True)


# ---------------------------------------------------------------- head selection

def select_heads(agu: Function, report) -> tuple:
    """Chain heads that can be speculated safely, plus a residual map of the rest.

    Drops heads whose region passes an inner loop, whose hoisting does not
    cover every path to a trueBB, that co-occur with another head, or whose
    hoisted load value the AGU itself still needs.
    """
    from .decouple import cleanup

    info = CFG(agu)
    residual = {}
    heads = []
    for h in report.chain_heads:
        if h in report.exit_branches:
            residual[h] = "EXIT-BRANCH"
        elif not agu.has_block(h):
            residual[h] = "NOT-IN-AGU"
        elif info.region(h)[1]:
            residual[h] = "INNER-LOOP-IN-REGION"
        else:
            heads.append(h)
    while heads:
        try:
            spec, smap = hoist_requests(agu, heads)
        except SpeculationError as e:
            for h in e.heads:
                residual[h] = e.code
            heads = [h for h in heads if h not in e.heads]
            continue
        gaps = coverage_gaps(info, smap)
        if gaps:
            bad = {bb for s, tb in gaps for bb, rs in smap.items() if any(r.id == s for r in rs)}
            for h in bad:
                residual[h] = "PARTIAL-COVERAGE"
            heads = [h for h in heads if h not in bad]
            continue
        cleaned = cleanup(spec, merge=True, drop_loops=True)
        needed = {i.site for i in cleaned.instructions() if i.op == "consume_val"}
        bad = {bb for bb, rs in smap.items() if any(r.kind == "load" and r.id in needed for r in rs)}
        if bad:
            for h in bad:
                residual[h] = "AGU-NEEDS-LOAD-VALUE"
            heads = [h for h in heads if h not in bad]
            continue
        return heads, residual
    return [], residual
