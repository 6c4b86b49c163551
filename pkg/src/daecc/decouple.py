"""Split a function into address-generation (AGU) and compute (CU) slices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .analysis import ensure_sites, loop_info
from .ir import Function, Instruction, check_function, is_value


@dataclass
class Site:
    """One original memory instruction and how each slice talks about it."""

    id: str
    array: str
    kind: str  # "load" | "store"
    block: str  # block of the original instruction (its trueBB)
    agu_value: bool = False  # DU forwards the loaded value to the AGU
    cu_value: bool = False  # DU forwards the loaded value to the CU
    hoisted_to: list = field(default_factory=list)

    @property
    def speculative(self) -> bool:
        return bool(self.hoisted_to)

    def to_json(self) -> dict:
        return {"id": self.id, "array": self.array, "kind": self.kind, "block": self.block,
                "aguValue": self.agu_value, "cuValue": self.cu_value, "hoistedTo": list(self.hoisted_to)}


@dataclass
class DaePair:
    agu: Function
    cu: Function
    sites: dict  # site id -> Site, in original program order
    original: Optional[Function] = None

    def arrays(self) -> list:
        return sorted({s.array for s in self.sites.values()})

    def channels(self) -> dict:
        """Per-array channel group with the request sites that use each channel."""
        out = {}
        for s in self.sites.values():
            g = out.setdefault(s.array, {"ld_addr": [], "st_addr": [], "ld_val": [], "st_val": []})
            if s.kind == "load":
                g["ld_addr"].append(s.id)
                if s.agu_value or s.cu_value:
                    g["ld_val"].append(s.id)
            else:
                g["st_addr"].append(s.id)
                g["st_val"].append(s.id)
        return out

    def refresh(self) -> None:
        agu = {i.site for i in self.agu.instructions() if i.op == "consume_val"}
        cu = {i.site for i in self.cu.instructions() if i.op == "consume_val"}
        for s in self.sites.values():
            s.agu_value = s.id in agu
            s.cu_value = s.id in cu

    def chan_json(self) -> dict:
        return {"sites": [s.to_json() for s in self.sites.values()], "channels": self.channels()}

    def dumps(self) -> str:
        return json.dumps(self.chan_json(), indent=2)


# ---------------------------------------------------------------- DCE

_ROOT_OPS = {"send_ld_addr", "send_st_addr", "produce_val", "store", "br", "condbr", "switch", "ret"}


def dce(f: Function, keep_sites: Optional[set] = None) -> Function:
    """Remove instructions whose values cannot reach a root.

    Roots are terminators and channel/memory side effects. A ``consume_val`` is
    kept when any consume of the same site is live, so every copy of a request
    site stays balanced with the sends the DU will see.
    """
    f = f.copy()
    defs = {}
    for b in f.blocks:
        for ins in b.instrs:
            if ins.dest:
                defs[ins.dest] = ins
    consumes = {}
    for ins in f.instructions():
        if ins.op == "consume_val":
            consumes.setdefault(ins.site, []).append(ins)
    live = set()
    work = []

    def mark(ins):
        if id(ins) in live:
            return
        live.add(id(ins))
        work.append(ins)
        if ins.op == "consume_val":
            for other in consumes.get(ins.site, ()):
                mark(other)

    for ins in f.instructions():
        if ins.op in _ROOT_OPS or ins.op == "load" or (
                ins.op == "consume_val" and keep_sites is not None and ins.site in keep_sites):
            mark(ins)
    while work:
        ins = work.pop()
        for v in ins.uses():
            d = defs.get(v)
            if d is not None:
                mark(d)
    for b in f.blocks:
        b.instrs = [i for i in b.instrs if id(i) in live]
    return f


# ---------------------------------------------------------------- CFG simplification

def _retarget(term: Instruction, old: str, new: str) -> None:
    term.labels = [new if l == old else l for l in term.labels]
    if term.op in ("condbr", "switch") and len(set(term.labels)) == 1:
        term.op = "br"
        term.args = []
        term.labels = term.labels[:1]


def _fold_same_target(f: Function) -> bool:
    changed = False
    for b in f.blocks:
        t = b.term
        if t.op in ("condbr", "switch") and len(set(t.labels)) == 1:
            b.term = Instruction("br", labels=[t.labels[0]])
            changed = True
    return changed


def _remove_empty(f: Function) -> bool:
    li = loop_info(f)
    protected = {f.entry} | set(li.loops) | {lp.latch for lp in li.loops.values()}
    preds = f.predecessors()
    bmap = f.block_map()
    for b in f.blocks:
        if b.id in protected or b.instrs or b.term.op != "br":
            continue
        s = b.term.labels[0]
        if s == b.id:
            continue
        sb = bmap[s]
        ok = True
        for p in preds[b.id]:
            t = bmap[p].term
            if t.op in ("condbr", "switch"):
                new = [s if l == b.id else l for l in t.labels]
                if len(set(new)) not in (1, len(new)):
                    ok = False
        # phi compatibility in the successor
        for phi in sb.phis():
            vb = phi.args[phi.labels.index(b.id)]
            for p in preds[b.id]:
                if p in phi.labels and phi.args[phi.labels.index(p)] != vb:
                    ok = False
        if not ok:
            continue
        for phi in sb.phis():
            k = phi.labels.index(b.id)
            vb = phi.args[k]
            del phi.args[k], phi.labels[k]
            for p in preds[b.id]:
                if p not in phi.labels:
                    phi.args.append(vb)
                    phi.labels.append(p)
        for p in preds[b.id]:
            _retarget(bmap[p].term, b.id, s)
        f.blocks = [x for x in f.blocks if x.id != b.id]
        return True
    return False


def _merge_chains(f: Function) -> bool:
    preds = f.predecessors()
    bmap = f.block_map()
    li = loop_info(f)
    for b in f.blocks:
        if b.term.op != "br":
            continue
        s = b.term.labels[0]
        if s == b.id or s == f.entry or s in li.loops or preds[s] != [b.id]:
            continue
        sb = bmap[s]
        ren = {}
        for phi in sb.phis():
            ren[phi.dest] = phi.args[0]
        body = sb.body()
        b.instrs.extend(body)
        b.term = sb.term
        f.blocks = [x for x in f.blocks if x.id != s]
        for x in f.blocks:
            for ins in x.all_instrs():
                ins.replace_uses(ren)
                if ins.op == "phi":
                    ins.labels = [b.id if l == s else l for l in ins.labels]
        _resolve_renames(f, ren)
        return True
    return False


def _resolve_renames(f: Function, ren: dict) -> None:
    # chained renames (phi of phi) settle in a few passes
    for _ in range(len(ren)):
        changed = False
        for ins in f.instructions():
            before = list(ins.args)
            ins.replace_uses(ren)
            changed |= before != ins.args
        if not changed:
            break


def _drop_dead_loops(f: Function) -> bool:
    li = loop_info(f)
    bmap = f.block_map()
    preds = f.predecessors()
    effects = {"send_ld_addr", "send_st_addr", "consume_val", "produce_val", "load", "store"}
    for h, lp in sorted(li.loops.items(), key=lambda kv: len(kv[1].body)):
        if any(i.op in effects for bid in lp.body for i in bmap[bid].instrs):
            continue
        exits = {v for u, v in li.exits(h, f)}
        if len(exits) != 1:
            continue
        x = exits.pop()
        if bmap[x].phis():
            continue
        inner = {i.dest for bid in lp.body for i in bmap[bid].instrs if i.dest}
        used_outside = any(v in inner for b in f.blocks if b.id not in lp.body for i in b.all_instrs() for v in i.uses())
        if used_outside:
            continue
        for p in preds[h]:
            if p not in lp.body:
                _retarget(bmap[p].term, h, x)
        f.blocks = [b for b in f.blocks if b.id not in lp.body]
        return True
    return False


def simplify_cfg(f: Function, merge: bool = False, drop_loops: bool = False) -> Function:
    """Fold same-target branches and remove empty forwarding blocks (canonical loops kept).

    ``merge`` also joins a block into its unique unconditional predecessor;
    ``drop_loops`` deletes loops without side effects whose values are unused.
    """
    f = f.copy()
    while True:
        changed = _fold_same_target(f)
        changed |= _remove_empty(f)
        if merge:
            changed |= _merge_chains(f)
        if drop_loops:
            changed |= _drop_dead_loops(f)
        if not changed:
            return f


def cleanup(f: Function, merge: bool = False, drop_loops: bool = False, keep_sites=None) -> Function:
    """Alternate DCE and CFG simplification to a fixpoint."""
    while True:
        g = simplify_cfg(dce(f, keep_sites), merge=merge, drop_loops=drop_loops)
        if _signature(g) == _signature(f):
            return g
        f = g


def _signature(f: Function) -> str:
    from .ir import print_function
    return print_function(f)


# ---------------------------------------------------------------- decouple

def agu_slice(f: Function) -> Function:
    agu = f.copy()
    agu.name = f.name + ".agu"
    for b in agu.blocks:
        out = []
        for ins in b.instrs:
            if ins.op == "load":
                out.append(Instruction("send_ld_addr", args=[ins.args[0]], array=ins.array, site=ins.site))
                out.append(Instruction("consume_val", dest=ins.dest, array=ins.array, site=ins.site))
            elif ins.op == "store":
                # value operand dropped so the value computation dies in this slice
                out.append(Instruction("send_st_addr", args=[ins.args[0]], array=ins.array, site=ins.site))
            else:
                out.append(ins)
        b.instrs = out
    return agu


def cu_slice(f: Function) -> Function:
    cu = f.copy()
    cu.name = f.name + ".cu"
    for b in cu.blocks:
        out = []
        for ins in b.instrs:
            if ins.op == "load":
                out.append(Instruction("consume_val", dest=ins.dest, array=ins.array, site=ins.site))
            elif ins.op == "store":
                out.append(Instruction("produce_val", args=[ins.args[1], 0], array=ins.array, site=ins.site))
            else:
                out.append(ins)
        b.instrs = out
    return cu


def collect_sites(f: Function) -> dict:
    sites = {}
    for b in f.blocks:
        for ins in b.instrs:
            if ins.op in ("load", "store"):
                sites[ins.site] = Site(ins.site, ins.array, ins.op, b.id)
    return sites


def decouple(f: Function, simplify: bool = True) -> DaePair:
    """Build the AGU/CU pair for ``f``.

    With ``simplify=False`` both slices keep the original CFG skeleton (only
    DCE runs), which is what the speculation passes operate on.
    """
    check_function(f, "decouple input")
    f = ensure_sites(f)
    agu = agu_slice(f)
    cu = cu_slice(f)
    if simplify:
        agu = cleanup(agu, merge=True, drop_loops=True)
        cu = cleanup(cu)
    else:
        agu = dce(agu)
        cu = dce(cu)
    pair = DaePair(agu, cu, collect_sites(f), original=f)
    pair.refresh()
    check_function(pair.agu, "agu slice")
    check_function(pair.cu, "cu slice")
    return pair


def finalize(pair: DaePair) -> DaePair:
    """Final cleanup of both slices after the speculation passes."""
    agu = cleanup(pair.agu, merge=True, drop_loops=True)
    cu = cleanup(pair.cu)
    out = DaePair(agu, cu, pair.sites, pair.original)
    out.refresh()
    check_function(out.agu, "agu slice")
    check_function(out.cu, "cu slice")
    return out


def request_sequence(f: Function, block: str) -> list:
    """Site ids of channel requests (sends) in one block, in order."""
    return [i.site for i in f.block(block).instrs if i.op in ("send_ld_addr", "send_st_addr")]


def uses_of(f: Function, value: str) -> list:
    return [i for i in f.instructions() if value in i.args and is_value(value)]
