"""Reference interpreter and a cycle-level model of the AGU / DU / CU triple.

Cycle model (one step per unit per cycle, AGU then DU then CU):

* AGU and CU issue one non-phi instruction per cycle; phis and terminators
  are free (control resolves in the cycle of the last instruction).
* ``consume_val`` does not block: it claims the next value of the array's
  value FIFO and yields a future. Arithmetic on futures stays lazy. A
  ``condbr``/``switch`` whose condition is still a future stalls the unit.
* Sends and produces enqueue (possibly unresolved) addresses/values into
  registered FIFOs of ``fifo_depth`` entries: a write is visible next cycle.
* The DU keeps one ordered request queue per array. A request is allocated
  into the LSQ once its address is known; loads read memory (latency
  ``mem_latency``) after every older same-address store has a known value, or
  take the youngest older non-poisoned store's value. Stores commit in order;
  poisoned stores are dropped without touching memory. One read and one
  write port per array.
"""

from __future__ import annotations

import json
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .ir import UNDEF, Function, Program

MASK = 0xFFFFFFFF
UNDEF_WORD = -559038737  # 0xDEADBEEF as a signed word


def wrap(x: int) -> int:
    x &= MASK
    return x - (1 << 32) if x & 0x80000000 else x


_NAME_SEED = {}


def opaque(name: str, vals) -> int:
    """Deterministic pure mixing function standing in for arbitrary compute."""
    h = _NAME_SEED.get(name)
    if h is None:
        h = _NAME_SEED[name] = zlib.crc32(name.encode())
    for v in vals:
        h = ((h ^ (v & MASK)) * 0x9E3779B1) & MASK
        h ^= h >> 16
    h = (h * 0x85EBCA6B) & MASK
    h ^= h >> 13
    return wrap(h)


_CMP = {"lt": lambda a, b: a < b, "gt": lambda a, b: a > b, "le": lambda a, b: a <= b,
        "ge": lambda a, b: a >= b, "eq": lambda a, b: a == b, "ne": lambda a, b: a != b}


def alu(ins, vals) -> int:
    op = ins.op
    if op == "const":
        return wrap(vals[0])
    if op == "add":
        return wrap(vals[0] + vals[1])
    if op == "sub":
        return wrap(vals[0] - vals[1])
    if op == "mul":
        return wrap(vals[0] * vals[1])
    if op == "icmp":
        return int(_CMP[ins.cc](vals[0], vals[1]))
    if op == "select":
        return vals[1] if vals[0] else vals[2]
    if op == "opaque":
        return opaque(ins.func, vals)
    raise ValueError(f"not an ALU op: {op}")


class SimError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


# ---------------------------------------------------------------- memory images

def memory_from_json(data, program: Optional[Program] = None) -> tuple:
    """``{"arrays": {...}, "args": {...}}`` -> (arrays, args). Arrays declared
    by ``program`` but missing from the data are zero-filled."""
    if isinstance(data, str):
        data = json.loads(data)
    arrays = {k: [wrap(int(v)) for v in vs] for k, vs in data.get("arrays", {}).items()}
    if program is not None:
        for name, size in program.array_sizes().items():
            arr = arrays.setdefault(name, [0] * size)
            if len(arr) < size:
                arr.extend([0] * (size - len(arr)))
    args = {k.lstrip("%"): int(v) for k, v in data.get("args", {}).items()}
    return arrays, args


def memory_to_json(arrays: dict, args: Optional[dict] = None) -> dict:
    return {"arrays": {k: list(v) for k, v in arrays.items()}, "args": dict(args or {})}


def _bind_args(f: Function, args: dict) -> dict:
    env = {}
    for p in f.params:
        name = p.lstrip("%")
        if name not in args:
            raise SimError("MISSING-ARG", f"no value for {p}")
        env[p] = wrap(args[name])
    return env


# ---------------------------------------------------------------- reference

@dataclass
class RefTrace:
    memory: dict
    stores: dict  # array -> [(site, addr, value)] in commit order
    path: list  # executed blocks (truncated at ``path_cap``)
    steps: int = 0

    def to_json(self) -> dict:
        return {"memory": self.memory, "stores": {a: [list(x) for x in s] for a, s in self.stores.items()},
                "steps": self.steps}


def run_reference(f: Function, mem: dict, args: dict, budget: int = 10_000_000, path_cap: int = 10_000) -> RefTrace:
    """Sequential interpretation of ``f`` (loads/stores go straight to memory)."""
    memory = {k: list(v) for k, v in mem.items()}
    env = _bind_args(f, args)
    stores = {}
    path = []
    bmap = f.block_map()
    cur, prev = f.entry, None
    steps = 0

    def val(a):
        if isinstance(a, int):
            return a
        if a == UNDEF:
            return UNDEF_WORD
        return env[a]

    while True:
        b = bmap[cur]
        if len(path) < path_cap:
            path.append(cur)
        phis = b.phis()
        if phis:
            new = {p.dest: val(p.args[p.labels.index(prev)]) for p in phis}
            env.update(new)
        for ins in b.instrs:
            steps += 1
            op = ins.op
            if op == "phi":
                continue
            if op == "load":
                addr = val(ins.args[0])
                arr = memory.get(ins.array)
                if arr is None or not 0 <= addr < len(arr):
                    raise SimError("OUT-OF-BOUNDS", f"load {ins.array}[{addr}] at {ins.site}")
                env[ins.dest] = arr[addr]
            elif op == "store":
                addr = val(ins.args[0])
                arr = memory.get(ins.array)
                if arr is None or not 0 <= addr < len(arr):
                    raise SimError("OUT-OF-BOUNDS", f"store {ins.array}[{addr}] at {ins.site}")
                v = val(ins.args[1])
                arr[addr] = v
                stores.setdefault(ins.array, []).append((ins.site, addr, v))
            else:
                env[ins.dest] = alu(ins, [val(a) for a in ins.args])
        steps += 1
        if steps > budget:
            raise SimError("NON-TERMINATION", f"more than {budget} steps")
        t = b.term
        if t.op == "ret":
            return RefTrace(memory, stores, path, steps)
        if t.op == "br":
            nxt = t.labels[0]
        elif t.op == "condbr":
            nxt = t.labels[0] if val(t.args[0]) else t.labels[1]
        else:
            nxt = t.labels[val(t.args[0]) % len(t.labels)]
        prev, cur = cur, nxt


# ---------------------------------------------------------------- futures

class Fut:
    """A value that may not be known yet; ``avail`` is the first cycle it can be used."""

    __slots__ = ("value", "avail", "ins", "args")

    def __init__(self, ins=None, args=None):
        self.value = None
        self.avail = None
        self.ins = ins
        self.args = args

    def resolve(self, value, cycle):
        self.value = value
        self.avail = cycle


def force(x, now):
    """Integer value of ``x`` if usable at cycle ``now``, else None."""
    if not isinstance(x, Fut):
        return x
    if x.avail is None and x.ins is not None:
        vals = []
        avail = 0
        for a in x.args:
            if isinstance(a, Fut):
                if force(a, 1 << 60) is None:
                    return None
                vals.append(a.value)
                avail = max(avail, a.avail)
            else:
                vals.append(a)
        x.resolve(alu(x.ins, vals), avail)
        x.args = None
    if x.avail is None or x.avail > now:
        return None
    return x.value


def known(x):
    """Value of ``x`` regardless of timing (None if unresolved)."""
    return force(x, 1 << 60)


# ---------------------------------------------------------------- configuration & results

@dataclass
class SimConfig:
    fifo_depth: int = 16
    mem_latency: int = 8
    lsq_loads: int = 4
    lsq_stores: int = 32
    budget: int = 10_000_000

    def __post_init__(self):
        for k in ("fifo_depth", "mem_latency", "lsq_loads", "lsq_stores", "budget"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")


@dataclass
class SimResult:
    cycles: int
    termination: str  # completed | deadlock | budget-exceeded
    memory: dict
    la: dict  # array -> [(site, kind, addr)] in DU allocation order
    lv: dict  # array -> [(site, value, poison)] in CU produce order
    committed: dict  # array -> [(site, addr, value)] in commit order
    produced: int = 0
    poisoned: int = 0
    spec_produced: int = 0
    spec_poisoned: int = 0
    oob_loads: int = 0
    stalls: dict = field(default_factory=dict)
    occupancy: dict = field(default_factory=dict)

    @property
    def misspec_rate(self) -> float:
        return self.spec_poisoned / self.spec_produced if self.spec_produced else 0.0

    def to_json(self) -> dict:
        return {"cycles": self.cycles, "termination": self.termination, "misspecRate": self.misspec_rate,
                "produced": self.produced, "poisoned": self.poisoned, "oobLoads": self.oob_loads,
                "stalls": self.stalls, "occupancy": self.occupancy,
                "committed": {a: [list(x) for x in s] for a, s in self.committed.items()},
                "memory": self.memory}


# ---------------------------------------------------------------- units

class _Unit:
    def __init__(self, name, f: Function, args: dict, sim):
        self.name = name
        self.f = f
        self.bmap = f.block_map()
        self.env = _bind_args(f, args)
        self.sim = sim
        self.cur = f.entry
        self.prev = None
        self.idx = 0
        self.entered = False
        self.done = False
        self.executed = 0
        self.last_paid = -1
        self.stalls = {"branch-wait": 0, "fifo-full": 0, "value-window": 0}

    def val(self, a):
        if isinstance(a, int):
            return a
        if a == UNDEF:
            return UNDEF_WORD
        return self.env[a]

    def step(self, now) -> bool:
        """Run one cycle; returns True if the unit made progress."""
        if self.done:
            return False
        sim = self.sim
        free = 0
        while True:
            b = self.bmap[self.cur]
            if not self.entered:
                phis = b.phis()
                if phis:
                    new = {p.dest: self.val(p.args[p.labels.index(self.prev)]) for p in phis}
                    self.env.update(new)
                    self.idx = len(phis)
                else:
                    self.idx = 0
                self.entered = True
            if self.idx < len(b.instrs):
                ins = b.instrs[self.idx]
                op = ins.op
                if op == "consume_val":
                    v = sim.claim(self, ins.array, now)
                    if v is None:
                        self.stalls["value-window"] += 1
                        return free > 0
                    self.env[ins.dest] = v
                elif op in ("send_ld_addr", "send_st_addr"):
                    if not sim.send(ins, self.val(ins.args[0]), now):
                        self.stalls["fifo-full"] += 1
                        return free > 0
                elif op == "produce_val":
                    if not sim.produce(ins, self.val(ins.args[0]), ins.args[1], now):
                        self.stalls["fifo-full"] += 1
                        return free > 0
                elif op in ("load", "store"):
                    raise SimError("BAD-UNIT", f"{op} in a decoupled slice")
                else:
                    vals = [self.val(a) for a in ins.args]
                    if any(isinstance(v, Fut) for v in vals):
                        self.env[ins.dest] = Fut(ins, vals)
                    else:
                        self.env[ins.dest] = alu(ins, vals)
                self.idx += 1
                self.executed += 1
                self.last_paid = now
                return True
            t = b.term
            if t.op == "ret":
                self.done = True
                return True
            if t.op == "br":
                nxt = t.labels[0]
                free += 1
                if free > 64:
                    return True
            else:
                c = force(self.val(t.args[0]), now)
                if c is None:
                    self.stalls["branch-wait"] += 1
                    return free > 0
                if t.op == "condbr":
                    nxt = t.labels[0] if c else t.labels[1]
                else:
                    nxt = t.labels[c % len(t.labels)]
                free += 1
                if free > 64:
                    return True
            self.prev, self.cur, self.entered = self.cur, nxt, False


class _Entry:
    __slots__ = ("seq", "kind", "site", "addr", "value", "poison", "issued", "ready", "has_value")

    def __init__(self, seq, kind, site, addr):
        self.seq = seq
        self.kind = kind
        self.site = site
        self.addr = addr
        self.value = None
        self.poison = None
        self.issued = False
        self.ready = None
        self.has_value = False


class _ArrayPort:
    """DU state for one array: request queue, store-value queue and LSQ."""

    def __init__(self, name, data):
        self.name = name
        self.data = data
        self.requests = deque()  # (kind, site, addr, ready)
        self.values = deque()  # (site, value, poison, ready)
        self.loads = deque()
        self.stores = deque()
        self.seq = 0


# ---------------------------------------------------------------- DAE simulation

class DaeSim:
    def __init__(self, pair, mem: dict, args: dict, cfg: SimConfig):
        self.cfg = cfg
        self.sites = pair.sites
        self.memory = {k: list(v) for k, v in mem.items()}
        self.ports = {}
        for a in sorted(set(self.memory) | {s.array for s in pair.sites.values()}):
            self.ports[a] = _ArrayPort(a, self.memory.setdefault(a, []))
        self.inbox = {"agu": {a: deque() for a in self.ports}, "cu": {a: deque() for a in self.ports}}
        self.claims = {"agu": {a: deque() for a in self.ports}, "cu": {a: deque() for a in self.ports}}
        self.agu = _Unit("agu", pair.agu, args, self)
        self.cu = _Unit("cu", pair.cu, args, self)
        self.la = {a: [] for a in self.ports}
        self.lv = {a: [] for a in self.ports}
        self.committed = {a: [] for a in self.ports}
        self.produced = self.poisoned = self.spec_produced = self.spec_poisoned = 0
        self.oob_loads = 0
        self.du_stalls = {"addr-wait": 0, "raw-wait": 0, "lsq-full": 0, "value-wait": 0, "fifo-full": 0,
                          "latency": 0}
        self.peak = {"requests": 0, "values": 0, "loads": 0, "stores": 0}

    # unit-side channel operations
    def claim(self, unit, array, now):
        box = self.inbox[unit.name][array]
        if box:
            value, ready = box.popleft()
            f = Fut()
            f.resolve(value, ready)
            return f
        q = self.claims[unit.name][array]
        if len(q) >= self.cfg.fifo_depth:
            return None
        f = Fut()
        q.append(f)
        return f

    def send(self, ins, addr, now) -> bool:
        p = self.ports[ins.array]
        if len(p.requests) >= self.cfg.fifo_depth:
            return False
        kind = "load" if ins.op == "send_ld_addr" else "store"
        p.requests.append((kind, ins.site, addr, now + 1))
        return True

    def produce(self, ins, value, poison, now) -> bool:
        p = self.ports[ins.array]
        if len(p.values) >= self.cfg.fifo_depth:
            return False
        p.values.append((ins.site, value, poison, now + 1))
        self.produced += 1
        self.poisoned += poison
        site = self.sites.get(ins.site)
        if site is not None and site.speculative:
            self.spec_produced += 1
            self.spec_poisoned += poison
        return True

    def _deliver(self, unit, array, value, now) -> bool:
        q = self.claims[unit][array]
        if q:
            q.popleft().resolve(value, now + 1)
            return True
        box = self.inbox[unit][array]
        if len(box) >= self.cfg.fifo_depth:
            return False
        box.append((value, now + 1))
        return True

    def _room(self, unit, array) -> bool:
        return bool(self.claims[unit][array]) or len(self.inbox[unit][array]) < self.cfg.fifo_depth

    # DU
    def du_step(self, now) -> bool:
        progress = False
        cfg = self.cfg
        for a, p in self.ports.items():
            # commit the oldest store
            if p.stores:
                st = p.stores[0]
                if st.has_value and (st.poison or force(st.value, now) is not None):
                    if st.poison:
                        p.stores.popleft()
                        progress = True
                    elif not any(ld.seq < st.seq and not ld.issued and ld.addr == st.addr for ld in p.loads):
                        if not 0 <= st.addr < len(p.data):
                            raise SimError("OUT-OF-BOUNDS", f"store {a}[{st.addr}] at {st.site}")
                        v = force(st.value, now)
                        p.data[st.addr] = v
                        self.committed[a].append((st.site, st.addr, v))
                        p.stores.popleft()
                        progress = True
                    else:
                        self.du_stalls["raw-wait"] += 1
            # retire the oldest load
            if p.loads and p.loads[0].issued:
                ld = p.loads[0]
                if ld.ready <= now:
                    site = self.sites.get(ld.site)
                    to_agu = site is not None and site.agu_value
                    to_cu = site is not None and site.cu_value
                    if (not to_agu or self._room("agu", a)) and (not to_cu or self._room("cu", a)):
                        if to_agu:
                            self._deliver("agu", a, ld.value, now)
                        if to_cu:
                            self._deliver("cu", a, ld.value, now)
                        p.loads.popleft()
                        progress = True
                    else:
                        self.du_stalls["fifo-full"] += 1
                else:
                    self.du_stalls["latency"] += 1
            # issue the oldest unissued load
            for ld in p.loads:
                if ld.issued:
                    continue
                src = None
                wait = False
                for st in reversed(p.stores):
                    if st.seq > ld.seq or st.addr != ld.addr:
                        continue
                    if not st.has_value or (not st.poison and force(st.value, now) is None):
                        wait = True
                        break
                    if st.poison:
                        continue
                    src = st
                    break
                if wait:
                    self.du_stalls["raw-wait"] += 1
                elif src is not None:
                    ld.value, ld.ready, ld.issued = force(src.value, now), now + 1, True
                    progress = True
                else:
                    if 0 <= ld.addr < len(p.data):
                        ld.value = p.data[ld.addr]
                    else:
                        ld.value = 0
                        self.oob_loads += 1
                    ld.ready, ld.issued = now + cfg.mem_latency, True
                    progress = True
                break
            # pair the next store value with the oldest store entry lacking one
            if p.values and p.values[0][3] <= now:
                target = next((st for st in p.stores if not st.has_value), None)
                if target is not None:
                    site, value, poison, _ = p.values.popleft()
                    if site != target.site:
                        raise SimError("CHANNEL-MISMATCH", f"{a}: value for {site} paired with request {target.site}")
                    target.value, target.poison, target.has_value = value, poison, True
                    self.lv[a].append((site, value, poison))
                    progress = True
            # allocate the next request
            if p.requests and p.requests[0][3] <= now:
                kind, site, addr, _ = p.requests[0]
                addr_v = force(addr, now)
                if addr_v is None:
                    self.du_stalls["addr-wait"] += 1
                elif (kind == "load" and len(p.loads) >= cfg.lsq_loads) or (
                        kind == "store" and len(p.stores) >= cfg.lsq_stores):
                    self.du_stalls["lsq-full"] += 1
                else:
                    p.requests.popleft()
                    e = _Entry(p.seq, kind, site, addr_v)
                    p.seq += 1
                    (p.loads if kind == "load" else p.stores).append(e)
                    self.la[a].append((site, kind, addr_v))
                    progress = True
            self.peak["requests"] = max(self.peak["requests"], len(p.requests))
            self.peak["values"] = max(self.peak["values"], len(p.values))
            self.peak["loads"] = max(self.peak["loads"], len(p.loads))
            self.peak["stores"] = max(self.peak["stores"], len(p.stores))
        return progress

    def idle(self) -> bool:
        if not (self.agu.done and self.cu.done):
            return False
        for p in self.ports.values():
            if p.requests or p.values or p.loads or p.stores:
                return False
        return True

    def inflight(self, now) -> bool:
        return any(ld.issued and ld.ready > now for p in self.ports.values() for ld in p.loads)

    def run(self) -> SimResult:
        cfg = self.cfg
        now = 0
        quiet = 0
        du_last = -1
        term = "completed"
        while not self.idle():
            if now >= cfg.budget:
                term = "budget-exceeded"
                break
            moved = self.agu.step(now)
            if self.du_step(now):
                moved = True
                du_last = now
            moved |= self.cu.step(now)
            now += 1
            if moved or self.inflight(now):
                quiet = 0
            else:
                quiet += 1
                if quiet > 3:
                    term = "deadlock"
                    break
        lv = {a: [(s, known(v) if not q else None, q) for s, v, q in vals] for a, vals in self.lv.items()}
        stalls = {"agu": dict(self.agu.stalls), "cu": dict(self.cu.stalls), "du": dict(self.du_stalls)}
        # terminators are free, so a run ends with the last cycle that did paid work
        cycles = now if term != "completed" else max(self.agu.last_paid, self.cu.last_paid, du_last) + 1
        return SimResult(cycles, term, self.memory, self.la, lv, self.committed, self.produced, self.poisoned,
                         self.spec_produced, self.spec_poisoned, self.oob_loads, stalls, dict(self.peak))


def run_dae(pair, mem: dict, args: dict, cfg: Optional[SimConfig] = None) -> SimResult:
    return DaeSim(pair, mem, args, cfg or SimConfig()).run()


def pipeline_report(r: SimResult, as_json: bool = False):
    """Per-unit stall breakdown of a run."""
    data = {"cycles": r.cycles, "termination": r.termination, "misspecRate": round(r.misspec_rate, 4),
            "stalls": r.stalls, "peakOccupancy": r.occupancy}
    if as_json:
        return data
    lines = [f"cycles {r.cycles} ({r.termination}), mis-speculation rate {r.misspec_rate:.1%}"]
    for unit in ("agu", "du", "cu"):
        parts = ", ".join(f"{k} {v}" for k, v in r.stalls[unit].items())
        lines.append(f"  {unit:3s}: {parts}")
    lines.append("  peak occupancy: " + ", ".join(f"{k} {v}" for k, v in r.occupancy.items()))
    return "\n".join(lines)
