"""Forward-path enumeration and path-directed walks over transformed functions.

The static checkers compare what the AGU sends and what the CU produces on
every forward path of a loop iteration. Transformed functions contain extra
blocks (poison and steering blocks); a walk follows a path of *original*
blocks and resolves inserted steering branches from the constants and phis
it has seen along the way.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .analysis import CFG
from .ir import Function, is_value


class PathLimitError(Exception):
    code = "PATH-LIMIT"


@dataclass
class Verdict:
    ok: bool
    reason: str = ""
    path: Optional[list] = None
    detail: dict = field(default_factory=dict)
    reproducer: Optional[str] = None
    skipped: bool = False

    def __bool__(self) -> bool:
        return self.ok

    def to_json(self) -> dict:
        return {"ok": self.ok, "skipped": self.skipped, "reason": self.reason, "path": self.path,
                "detail": self.detail, "reproducer": self.reproducer}


PASS = Verdict(True)


def iteration_paths(info: CFG, start: str, limit: int = 100_000) -> list:
    """All forward paths from ``start`` to the end of its loop iteration.

    A path ends at a block without in-scope forward successors (the latch, a
    ``ret``) or with an edge leaving the loop; such an exit target is appended
    as the final element. Paths running into a dead end are dropped.
    """
    lp = info.loops.innermost(start)
    scope = set(lp.body) if lp else set(info.fsucc)
    out = []
    stack = [(start, [start])]
    while stack:
        node, path = stack.pop()
        if node not in scope:
            out.append(path)
        else:
            succ = info.fsucc[node]
            if not succ:
                if (lp is not None and node == lp.latch) or info.f.block(node).term.op == "ret":
                    out.append(path)
            for s in reversed(succ):
                stack.append((s, path + [s]))
        if len(out) > limit:
            raise PathLimitError(f"more than {limit} paths from {start}")
    return out


def ends_in_exit(info: CFG, path: list) -> bool:
    return len(path) > 1 and path[-1] not in info.loop_scope(path[0])


def loop_start(info: CFG, block: str) -> str:
    lp = info.loops.innermost(block)
    return lp.header if lp else info.f.entry


class WalkError(Exception):
    pass


def _eval(ins, env):
    vals = []
    for a in ins.args:
        if is_value(a):
            if a not in env or env[a] is None:
                return None
            vals.append(env[a])
        elif isinstance(a, int):
            vals.append(a)
        else:
            return None
    op = ins.op
    if op == "const":
        return vals[0]
    if op == "add":
        return vals[0] + vals[1]
    if op == "sub":
        return vals[0] - vals[1]
    if op == "mul":
        return vals[0] * vals[1]
    if op == "icmp":
        a, b = vals
        return int({"lt": a < b, "gt": a > b, "le": a <= b, "ge": a >= b, "eq": a == b, "ne": a != b}[ins.cc])
    if op == "select":
        return vals[1] if vals[0] else vals[2]
    return None


def walk(fn: Function, path: list, original: set, exits: bool = False) -> list:
    """Memory and channel events of ``fn`` along ``path`` (original block ids).

    Blocks of ``path`` missing from ``fn`` (removed by simplification) are
    skipped; blocks of ``fn`` not in ``original`` are inserted blocks whose
    branches are resolved from known values. With ``exits`` the last element
    of ``path`` is a loop-exit target where the walk stops. Returns a list of
    ``(op, array, site, poison)`` tuples.
    """
    bmap = fn.block_map()
    tail_exit = path[-1] if exits else None
    if exits:
        path = path[:-1]
    present = [b for b in path if b in bmap]
    if not present:
        return []
    events = []
    env = {}
    inserted_reach = {}

    def reaches_via_inserted(s, target):
        key = (s, target)
        if key in inserted_reach:
            return inserted_reach[key]
        seen = {s}
        work = [s]
        ok = False
        while work:
            n = work.pop()
            if n == target:
                ok = True
                break
            if n in original or n not in bmap:
                continue
            for t in bmap[n].successors():
                if t not in seen:
                    seen.add(t)
                    work.append(t)
        inserted_reach[key] = ok
        return ok

    cur, prev = present[0], None
    k = 0
    steps = 0
    while True:
        steps += 1
        if steps > 10_000:
            raise WalkError("walk does not terminate")
        b = bmap[cur]
        for ins in b.instrs:
            if ins.op == "phi":
                if prev in ins.labels:
                    a = ins.args[ins.labels.index(prev)]
                    env[ins.dest] = a if isinstance(a, int) else env.get(a)
                else:
                    env[ins.dest] = None
        for ins in b.instrs:
            if ins.op in ("send_ld_addr", "send_st_addr", "load", "store"):
                events.append((ins.op, ins.array, ins.site, 0))
            elif ins.op == "consume_val":
                events.append(("consume_val", ins.array, ins.site, 0))
            elif ins.op == "produce_val":
                events.append(("produce_val", ins.array, ins.site, ins.args[1]))
            elif ins.op != "phi" and ins.dest:
                env[ins.dest] = _eval(ins, env)
        t = b.term
        if cur in original:
            if k + 1 >= len(present):
                target = tail_exit
                if target is None:
                    return events
            else:
                target = present[k + 1]
            cands = [s for s in b.successors() if s == target or (s not in original and reaches_via_inserted(s, target))]
            if not cands:
                if target == tail_exit:
                    return events
                raise WalkError(f"no route from {cur} to {target}")
            nxt = cands[0]
        else:
            if t.op == "br":
                nxt = t.labels[0]
            elif t.op in ("condbr", "switch"):
                c = t.args[0]
                v = c if isinstance(c, int) else env.get(c)
                if v is None:
                    raise WalkError(f"unresolved steering branch in {cur}")
                if t.op == "condbr":
                    nxt = t.labels[0] if v else t.labels[1]
                else:
                    nxt = t.labels[v % len(t.labels)]
            else:
                return events
        prev, cur = cur, nxt
        if cur in original:
            if cur == tail_exit or cur not in bmap:
                return events
            k = present.index(cur, k)
