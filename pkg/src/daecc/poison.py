"""Poison planning and placement in the CU, poison-block merging, and
hoisting of speculative load consumption."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .analysis import CFG
from .ir import UNDEF, BasicBlock, Function, IRError, Instruction, check_function, is_value, label_key
from .paths import PathLimitError, Verdict, WalkError, ends_in_exit, iteration_paths, walk
from .speculate import SpecReqMap, topo_order


class PlacementError(Exception):
    code = "DOMINANCE-BROKEN"


@dataclass
class PoisonAction:
    edge: tuple
    request: str
    spec_bb: str
    true_bb: str
    array: str

    def to_json(self) -> dict:
        return {"edge": list(self.edge), "request": self.request, "specBB": self.spec_bb,
                "trueBB": self.true_bb, "array": self.array}


@dataclass
class PoisonPlan:
    actions: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)  # specBB -> [{"path": [...], "events": [...]}]

    def for_spec(self, bb) -> list:
        return [a for a in self.actions if a.spec_bb == bb]

    def to_json(self) -> dict:
        return {"actions": [a.to_json() for a in self.actions],
                "traces": {bb: ts for bb, ts in self.traces.items()}}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def plan_poisons(cu: Function, smap: SpecReqMap, path_limit: int = 100_000) -> PoisonPlan:
    """Walk every forward path from each specBB and decide on which edge each
    speculative store that does not become true is poisoned."""
    info = CFG(cu)
    plan = PoisonPlan()
    seen = set()
    for spec, reqs in smap.items():
        stores = [r for r in reqs if r.kind == "store"]
        true_blocks = list(dict.fromkeys(r.true_bb for r in stores))
        by_tb = {tb: [r for r in stores if r.true_bb == tb] for tb in true_blocks}
        scope = info.loop_scope(spec)
        traces = plan.traces.setdefault(spec, [])

        def reach(v, tb):
            return v in scope and info.reachable(v, tb)

        def emit(edge, tb, events):
            for r in by_tb[tb]:
                events.append(["poison", list(edge), r.id])
                key = (edge, r.id, spec)
                if key not in seen:
                    seen.add(key)
                    plan.actions.append(PoisonAction(edge, r.id, spec, tb, r.array))

        for path in iteration_paths(info, spec, path_limit):
            tbs = list(true_blocks)
            events = []
            edges = list(zip(path, path[1:]))
            for u, v in edges:
                while tbs:
                    tb = tbs[0]
                    if v == tb:
                        events.append(["use", tb])
                        tbs.pop(0)
                        break
                    if not reach(v, tb):
                        emit((u, v), tb, events)
                        tbs.pop(0)
                        continue
                    break
            # anything still pending can no longer become true on this path
            if tbs and edges:
                for tb in tbs:
                    emit(edges[-1], tb, events)
            traces.append({"path": path, "events": events})
    return plan


# ---------------------------------------------------------------- placement

@dataclass
class Placement:
    request: str
    spec_bb: str
    true_bb: str
    edge: tuple
    case: int  # 1 new block (reusable), 2 new block + steering, 3 prepend to edge dst
    blocks: list = field(default_factory=list)
    steering: list = field(default_factory=list)
    note: str = ""

    def to_json(self) -> dict:
        return {"request": self.request, "specBB": self.spec_bb, "trueBB": self.true_bb, "edge": list(self.edge),
                "case": self.case, "blocks": self.blocks, "steering": self.steering, "note": self.note}


@dataclass
class PlacementRecord:
    placements: list = field(default_factory=list)
    poison_blocks: list = field(default_factory=list)
    steer_blocks: list = field(default_factory=list)

    def cases(self) -> dict:
        return {(p.request, p.spec_bb, tuple(p.edge)): p.case for p in self.placements}

    def to_json(self) -> dict:
        return {"placements": [p.to_json() for p in self.placements],
                "poisonBlocks": self.poison_blocks, "steerBlocks": self.steer_blocks}


def classify(info: CFG, act: PoisonAction) -> int:
    u, v = act.edge
    if info.reachable(act.true_bb, v):
        return 1
    if not info.dom.dominates(act.spec_bb, v):
        return 2
    return 3


def _poison(act) -> Instruction:
    return Instruction("produce_val", args=[UNDEF, 1], array=act.array, site=act.request)


class _Steering:
    """Per-specBB 1-bit value: 1 iff the current path went through specBB."""

    def __init__(self, f: Function, info: CFG):
        self.f = f
        self.info = info
        self.bmap = f.block_map()
        self.memo = {}
        self.created = []

    def at_end(self, spec, b):
        key = (spec, b)
        if key in self.memo:
            return self.memo[key]
        info = self.info
        if b == spec or info.dom.dominates(spec, b):
            val = 1
        elif not info.reachable(spec, b):
            val = 0
        else:
            ins = [self.at_end(spec, p) for p in info.fpred[b]]
            if all(isinstance(x, int) for x in ins) and len(set(ins)) == 1:
                val = ins[0]
            else:
                val = self.f.fresh_value(f"spec{spec}_")
                phi = Instruction("phi", dest=val, args=ins, labels=list(info.fpred[b]))
                blk = self.bmap[b]
                blk.instrs.insert(len(blk.phis()), phi)
                self.created.append(val)
        self.memo[key] = val
        return val


def apply_poison(cu: Function, plan: PoisonPlan, smap: SpecReqMap) -> tuple:
    """Materialize the poison actions of ``plan`` as produce_val(poison=1) ops.

    Placement follows the three guards (trueBB reaches the edge target / specBB
    does not dominate it / otherwise prepend). Two conditions make placement
    more conservative than the guards alone:

    * a prepend is used only if every planned path through the target block
      poisons the request on an edge into that block; otherwise the action
      gets its own block on the edge;
    * any block on an edge whose source is not dominated by specBB is steered,
      so it only runs on paths that went through specBB.

    Returns ``(cu', PlacementRecord)``.
    """
    out = cu.copy()
    info = CFG(out)
    rank = {b: k for k, b in enumerate(topo_order(info))}
    bmap = out.block_map()
    rec = PlacementRecord()
    steer = _Steering(out, info)

    prepend_ok = {}
    for spec, traces in plan.traces.items():
        for t in traces:
            poisoned_at = {ev[2]: ev[1][1] for ev in t["events"] if ev[0] == "poison"}
            for blk in t["path"]:
                for r in smap[spec]:
                    key = (spec, r.id, blk)
                    prepend_ok[key] = prepend_ok.get(key, True) and poisoned_at.get(r.id) == blk

    groups = {}  # edge -> {spec: [actions]}
    prepends = []
    for act in plan.actions:
        case = classify(info, act)
        p = Placement(act.request, act.spec_bb, act.true_bb, act.edge, case)
        rec.placements.append(p)
        u, v = act.edge
        if case == 3 and prepend_ok.get((act.spec_bb, act.request, v), False) and v not in info.loops.loops:
            prepends.append((act, p))
            continue
        if case == 3:
            p.note = "prepend would run on paths that poison this request elsewhere; edge block used"
        groups.setdefault(act.edge, {}).setdefault(act.spec_bb, []).append((act, p))

    # steering values are computed on the unsplit CFG
    flags = {}
    for edge, by_spec in groups.items():
        for spec in by_spec:
            u = edge[0]
            flags[(edge, spec)] = 1 if info.dom.dominates(spec, u) else steer.at_end(spec, u)

    for act, p in prepends:
        blk = bmap[act.edge[1]]
        k = len(blk.phis()) + sum(1 for i in blk.instrs if i.is_poison)
        blk.instrs.insert(k, _poison(act))
        p.blocks = [blk.id]

    pending = "<next>"
    for edge in sorted(groups, key=lambda e: (rank[e[0]], rank.get(e[1], len(rank)), label_key(e[1]))):
        u, v = edge
        by_spec = groups[edge]
        exits = [u]
        for spec in sorted(by_spec, key=lambda s: rank[s]):
            acts = by_spec[spec]
            flag = flags[(edge, spec)]
            pb = BasicBlock(out.fresh_label(), [_poison(a) for a, _ in acts], Instruction("br", labels=[pending]))
            out.blocks.append(pb)
            rec.poison_blocks.append(pb.id)
            made = [pb.id]
            if flag == 1:
                entry, new_exits = pb.id, [pb.id]
            elif flag == 0:
                raise PlacementError(f"poison on {u}->{v} for {spec} is unreachable")
            else:
                sb = BasicBlock(out.fresh_label(), [], Instruction("condbr", args=[flag], labels=[pb.id, pending]))
                out.blocks.append(sb)
                rec.steer_blocks.append(sb.id)
                made = [sb.id, pb.id]
                entry, new_exits = sb.id, [sb.id, pb.id]
            for x in exits:
                t = bmap[x].term if x in bmap else out.block(x).term
                t.labels = [entry if (l == pending or (x == u and l == v)) else l for l in t.labels]
            exits = new_exits
            bmap = out.block_map()
            for a, p in acts:
                p.blocks = list(made)
                p.steering = [] if flag == 1 else [flag]
        for x in exits:
            t = bmap[x].term
            t.labels = [v if l == pending else l for l in t.labels]
        for phi in bmap[v].phis():
            k = phi.labels.index(u)
            val = phi.args[k]
            del phi.args[k], phi.labels[k]
            for x in exits:
                phi.args.append(val)
                phi.labels.append(x)
    try:
        check_function(out, "poisoned cu")
    except IRError as e:
        raise PlacementError(str(e)) from e
    return out, rec


# ---------------------------------------------------------------- merging

def _poison_only(b: BasicBlock) -> bool:
    return bool(b.instrs) and all(i.is_poison for i in b.instrs) and b.term.op == "br"


def merge_poison_blocks(cu: Function, log: Optional[list] = None) -> tuple:
    """Merge poison-only blocks with the same poison list and successor.

    The lower-numbered block is kept; predecessors of the other are redirected
    to it. Merged ``(kept, removed)`` pairs are appended to ``log``.
    Returns ``(cu', merged count)``.
    """
    out = cu.copy()
    merged = 0
    while True:
        bmap = out.block_map()
        preds = out.predecessors()
        cands = sorted((b for b in out.blocks if _poison_only(b)), key=lambda b: label_key(b.id))
        done = False
        for i, a in enumerate(cands):
            for b in cands[i + 1:]:
                sig_a = [(x.array, x.site) for x in a.instrs]
                sig_b = [(x.array, x.site) for x in b.instrs]
                if sig_a != sig_b or a.successors() != b.successors():
                    continue
                succ = bmap[a.term.labels[0]]
                if any(p.args[p.labels.index(a.id)] != p.args[p.labels.index(b.id)] for p in succ.phis()):
                    continue
                if any(a.id in bmap[p].successors() for p in preds[b.id]):
                    continue
                for p in preds[b.id]:
                    t = bmap[p].term
                    t.labels = [a.id if l == b.id else l for l in t.labels]
                for phi in succ.phis():
                    k = phi.labels.index(b.id)
                    del phi.args[k], phi.labels[k]
                out.blocks = [x for x in out.blocks if x.id != b.id]
                merged += 1
                if log is not None:
                    log.append((a.id, b.id))
                done = True
                break
            if done:
                break
        if not done:
            return out, merged


# ---------------------------------------------------------------- speculative loads

def _ssa_update(f: Function, info: CFG, defs: dict, old: str) -> None:
    """Replace uses of ``old`` by the reaching definition among ``defs``
    (block -> value defined at the end of that block), adding phis at joins."""
    bmap = f.block_map()
    at_start = {}

    def end_of(b):
        if b in defs:
            return defs[b]
        return start_of(b)

    def start_of(b):
        if b in at_start:
            return at_start[b]
        preds = info.fpred[b]
        if not preds:
            at_start[b] = UNDEF
            return UNDEF
        if len(preds) == 1:
            v = end_of(preds[0])
            at_start[b] = v
            return v
        name = f.fresh_value("sv")
        at_start[b] = name
        phi = Instruction("phi", dest=name, args=[], labels=[])
        blk = bmap[b]
        blk.instrs.insert(len(blk.phis()), phi)
        phi.args = [end_of(p) for p in preds]
        phi.labels = list(preds)
        if len(set(phi.args)) == 1:
            at_start[b] = phi.args[0]
            blk.instrs.remove(phi)
            _replace_everywhere(f, name, phi.args[0])
        return at_start[b]

    for b in f.blocks:
        for ins in b.all_instrs():
            if old not in ins.args:
                continue
            if ins.op == "phi":
                ins.args = [end_of(l) if a == old else a for a, l in zip(ins.args, ins.labels)]
            else:
                v = start_of(b.id)
                ins.args = [v if a == old else a for a in ins.args]


def _replace_everywhere(f: Function, old: str, new) -> None:
    for ins in f.instructions():
        if old in ins.args:
            ins.args = [new if a == old else a for a in ins.args]


def _phi_to_select(f: Function, info: CFG, values: set) -> int:
    """Rewrite two-way phis over hoisted load values into selects on the
    branch that decides which incoming edge is taken."""
    n = 0
    bmap = f.block_map()
    for b in f.blocks:
        for phi in list(b.phis()):
            if len(phi.args) != 2 or not any(a in values for a in phi.args):
                continue
            d = info.dom.idom.get(b.id)
            if d is None or d == b.id:
                continue
            t = bmap[d].term
            if t.op != "condbr" or not is_value(t.args[0]):
                continue
            st, sf = t.labels
            sides = []
            for lbl in phi.labels:
                on_t = (lbl == d and st == b.id) or (st != b.id and info.reachable(st, lbl))
                on_f = (lbl == d and sf == b.id) or (sf != b.id and info.reachable(sf, lbl))
                sides.append((on_t, on_f))
            if sides[0] == (True, False) and sides[1] == (False, True):
                tv, fv = phi.args
            elif sides[0] == (False, True) and sides[1] == (True, False):
                fv, tv = phi.args
            else:
                continue
            defs = f.definitions()
            if any(is_value(x) and defs.get(x, (None,))[0] is not None and
                   not info.dom.dominates(defs[x][0], b.id) for x in (tv, fv)):
                continue
            sel = Instruction("select", dest=phi.dest, args=[t.args[0], tv, fv])
            k = b.instrs.index(phi)
            b.instrs.pop(k)
            b.instrs.insert(len(b.phis()), sel)
            n += 1
    return n


def hoist_load_consumes(cu: Function, smap: SpecReqMap) -> Function:
    """Move the CU consume of every speculative load to the block its request
    was hoisted to, and repair SSA for its uses."""
    out = cu.copy()
    info = CFG(out)
    bmap = out.block_map()
    originals = {}
    for b in out.blocks:
        for ins in b.instrs:
            if ins.op == "consume_val":
                originals.setdefault(ins.site, ins)
    defs = {}  # site -> {specBB: new value}
    for spec, reqs in smap.items():
        for r in reqs:
            ins = originals.get(r.id)
            if r.kind != "load" or ins is None:
                continue
            name = out.fresh_value(ins.dest[1:] + "_s")
            bmap[spec].instrs.append(Instruction("consume_val", dest=name, array=ins.array, site=r.id))
            defs.setdefault(r.id, {})[spec] = name
    hoisted = set()
    for site, d in defs.items():
        ins = originals[site]
        for b in out.blocks:
            if ins in b.instrs:
                b.instrs.remove(ins)
        hoisted |= set(d.values())
        if len(d) == 1:
            _replace_everywhere(out, ins.dest, next(iter(d.values())))
        else:
            _ssa_update(out, info, d, ins.dest)
    if hoisted:
        _phi_to_select(out, CFG(out), hoisted)
    check_function(out, "cu after load hoisting")
    return out


# ---------------------------------------------------------------- static check

def _starts(info: CFG) -> list:
    return [info.f.entry] + sorted(info.loops.loops, key=label_key)


def check_lemma1(original: Function, agu: Function, cu: Function, path_limit: int = 100_000) -> Verdict:
    """Exhaustive path check of the AGU/CU channel protocol.

    On every forward iteration path of every loop (and of the function body),
    per array: the CU produces exactly one tagged value per AGU store request,
    in the same order; value ``k`` is poisoned iff that store is not executed
    by the original program on the path; the non-poisoned values are the
    original stores in order; and each slice consumes exactly the load values
    routed to it, in request order.
    """
    info = CFG(original)
    orig_ids = {b.id for b in original.blocks}
    agu_sites = {i.site for i in agu.instructions() if i.op == "consume_val"}
    cu_sites = {i.site for i in cu.instructions() if i.op == "consume_val"}
    for st in _starts(info):
        try:
            paths = iteration_paths(info, st, path_limit)
        except PathLimitError as e:
            return Verdict(True, reason=str(e), skipped=True)
        for p in paths:
            ex = ends_in_exit(info, p)
            try:
                ev_o = walk(original, p, orig_ids, ex)
                ev_a = walk(agu, p, orig_ids, ex)
                ev_c = walk(cu, p, orig_ids, ex)
            except WalkError as e:
                return Verdict(False, reason=f"walk failed: {e}", path=p)
            arrays = {e[1] for e in ev_o + ev_a + ev_c}
            for arr in sorted(arrays):
                stores = [s for op, a, s, _ in ev_o if a == arr and op == "store"]
                sends = [s for op, a, s, _ in ev_a if a == arr and op == "send_st_addr"]
                vals = [(s, q) for op, a, s, q in ev_c if a == arr and op == "produce_val"]
                detail = {"array": arr, "stores": stores, "agu": sends, "cu": vals}
                if [s for s, _ in vals] != sends:
                    return Verdict(False, reason="CU values do not match AGU store requests", path=p, detail=detail)
                if [s for s, q in vals if not q] != stores:
                    return Verdict(False, reason="non-poisoned values differ from original stores", path=p,
                                   detail=detail)
                if any(q != (s not in stores) for s, q in vals):
                    return Verdict(False, reason="poison flag does not match store execution", path=p,
                                   detail=detail)
                lds = [s for op, a, s, _ in ev_a if a == arr and op == "send_ld_addr"]
                for who, evs, routed in (("agu", ev_a, agu_sites), ("cu", ev_c, cu_sites)):
                    got = [s for op, a, s, _ in evs if a == arr and op == "consume_val"]
                    want = [s for s in lds if s in routed]
                    if got != want:
                        return Verdict(False, reason=f"{who} load consumption out of step", path=p,
                                       detail={"array": arr, "requests": lds, "consumed": got})
    return Verdict(True)
