"""Differential testing, random program generation and the experiment sweeps."""

from __future__ import annotations

import json
import random
import statistics
from dataclasses import asdict, dataclass, field
from typing import Optional

from .ir import Function, IRError, Program, parse_program, print_program, validate
from .kernels import load as load_kernel
from .kernels import nesting_template
from .paths import PathLimitError, Verdict
from .pipeline import Compiled, PipelineConfig, compile_function
from .poison import check_lemma1
from .sim import SimConfig, SimError, memory_to_json, run_dae, run_reference
from .speculate import SpeculationError


def check_lemma1_static(pair, path_limit: int = 100_000) -> Verdict:
    """Path-enumeration check of a transformed pair against its original.

    ``pair`` is a DaePair (with ``original`` set) or a Compiled result.
    """
    if isinstance(pair, Compiled):
        pair = pair.pair
    return check_lemma1(pair.original, pair.agu, pair.cu, path_limit)


# ---------------------------------------------------------------- differential testing

def _dynamic_lemma(r, ref) -> Optional[str]:
    for arr in sorted(set(r.la) | set(ref.stores)):
        reqs = [(s, a) for s, k, a in r.la.get(arr, []) if k == "store"]
        vals = r.lv.get(arr, [])
        if len(reqs) != len(vals):
            return f"{arr}: {len(reqs)} store requests but {len(vals)} values"
        kept = [(s, a, v) for (s, a), (_, v, q) in zip(reqs, vals) if not q]
        if kept != ref.stores.get(arr, []):
            return f"{arr}: non-poisoned (address, value) pairs differ from the reference stores"
        if r.committed.get(arr, []) != ref.stores.get(arr, []):
            return f"{arr}: committed stores differ from the reference"
    return None


def run_case(compiled: Compiled, mem: dict, args: dict, sim: Optional[SimConfig] = None) -> Verdict:
    f = compiled.original
    try:
        ref = run_reference(f, mem, args)
    except SimError as e:
        return Verdict(True, reason=f"reference: {e.code}", skipped=True)
    try:
        r = run_dae(compiled.pair, mem, args, sim)
    except SimError as e:
        return Verdict(False, reason=f"simulation error {e}")
    if r.termination != "completed":
        return Verdict(False, reason=f"simulation {r.termination} after {r.cycles} cycles")
    bad = _dynamic_lemma(r, ref)
    if bad:
        return Verdict(False, reason=bad)
    if r.memory != ref.memory:
        return Verdict(False, reason="final memories differ")
    return Verdict(True, detail={"cycles": r.cycles, "misspec": r.misspec_rate})


def differential_test(f, inputs: list, cfg: Optional[PipelineConfig] = None,
                      sim: Optional[SimConfig] = None, program: Optional[Program] = None) -> Verdict:
    """Compile ``f`` and compare the simulated pair with the reference on each input.

    ``inputs`` is a list of ``(arrays, args)``. Pipeline errors that mark an
    unsupported shape become skips with the error code as reason.
    """
    cfg = cfg or PipelineConfig()
    try:
        compiled = compile_function(f, cfg)
    except (SpeculationError, PathLimitError) as e:
        return Verdict(True, reason=getattr(e, "code", type(e).__name__), skipped=True)
    static = check_lemma1_static(compiled, cfg.path_limit)
    skipped = 0
    for k, (mem, args) in enumerate(inputs):
        v = run_case(compiled, mem, args, sim)
        if not v.ok:
            v.detail.update({"input": k, "static": static.ok})
            v.reproducer = _reproducer(f, program, mem, args)
            return v
        skipped += v.skipped
    if not static.ok and not static.skipped:
        return Verdict(False, reason=f"static check: {static.reason}", path=static.path, detail=static.detail,
                       reproducer=_reproducer(f, program, *inputs[0]) if inputs else None)
    if inputs and skipped == len(inputs):
        return Verdict(True, reason="reference faulted on every input", skipped=True)
    return Verdict(True, detail={"residual": dict(compiled.report.residual), "spec": compiled.smap.to_json()})


def _reproducer(f: Function, program: Optional[Program], mem, args) -> str:
    from .ir import print_function
    text = print_program(program) if program is not None else print_function(f)
    return text + "\n; input: " + json.dumps(memory_to_json(mem, args))


# ---------------------------------------------------------------- random programs

@dataclass
class GenParams:
    seed: int = 0
    max_depth: int = 2
    block_budget: int = 24
    store_density: float = 0.35
    lod_rate: float = 0.5
    arrays: int = 2
    array_size: int = 64
    max_stmts: int = 5
    switch_rate: float = 0.15
    loop_rate: float = 0.15


class _Gen:
    def __init__(self, p: GenParams):
        self.p = p
        self.rng = random.Random(p.seed)
        self.nv = 0
        self.nb = 0
        self.blocks = []  # (label, lines, term)
        self.cur = None
        self.arrays = [f"M{k}" for k in range(max(1, p.arrays))]
        self.stored = set()
        self.loaded_from = {}  # value -> array it was loaded from

    def val(self):
        self.nv += 1
        return f"%v{self.nv}"

    def new_block(self):
        self.nb += 1
        lbl = f"B{self.nb}"
        self.blocks.append([lbl, [], None])
        return lbl

    def emit(self, line):
        self.block(self.cur)[1].append(line)

    def block(self, lbl):
        for b in self.blocks:
            if b[0] == lbl:
                return b
        raise KeyError(lbl)

    def term(self, t):
        self.block(self.cur)[2] = t

    def pick(self, pool):
        return self.rng.choice(pool)

    def address(self, pool, counters):
        rng = self.rng
        size = self.p.array_size
        data = [v for v in pool if v not in counters]
        if data and rng.random() < 0.5:
            v = self.pick(data)
            lo, a, hi, b = (self.val() for _ in range(4))
            self.emit(f"{lo} = icmp lt {v}, 0")
            self.emit(f"{a} = select {lo}, 0, {v}")
            self.emit(f"{hi} = icmp ge {a}, {size}")
            self.emit(f"{b} = select {hi}, {size - 1}, {a}")
            return b
        # counters are < 8 each (loop bounds are small), so this stays in range
        c = self.val()
        base = self.pick(counters)
        self.emit(f"{c} = add {base}, {rng.randrange(0, size - 8 * len(counters))}")
        return c

    def stmts(self, pool, counters, depth):
        rng = self.rng
        n = rng.randint(1, self.p.max_stmts)
        pool = list(pool)
        for _ in range(n):
            r = rng.random()
            budget_left = self.nb < self.p.block_budget
            if depth < self.p.max_depth and budget_left and r < 0.25:
                pool = self.if_stmt(pool, counters, depth)
            elif depth < self.p.max_depth and budget_left and r < 0.25 + self.p.loop_rate:
                pool = self.loop_stmt(pool, counters, depth)
            elif r < 0.55 and self.p.store_density > 0:
                arr = self.pick(self.arrays)
                v = self.val()
                addr = self.address(pool, counters)
                self.emit(f"{v} = load @{arr}[{addr}]")
                self.loaded_from[v] = arr
                pool.append(v)
            elif r < 0.55 + self.p.store_density * 0.6 and self.p.store_density > 0:
                arr = self.pick(self.arrays)
                addr = self.address(pool, counters)
                self.emit(f"store @{arr}[{addr}], {self.pick(pool)}")
                self.stored.add(arr)
            else:
                v = self.val()
                op = rng.choice(["add", "sub", "mul", "opaque", "icmp", "select"])
                a, b = self.pick(pool), self.pick(pool)
                if op == "opaque":
                    self.emit(f"{v} = opaque f{rng.randrange(4)}({a}, {b})")
                elif op == "icmp":
                    self.emit(f"{v} = icmp {rng.choice(['lt', 'gt', 'eq', 'ne'])} {a}, {b}")
                elif op == "select":
                    self.emit(f"{v} = select {self.pick(pool)}, {a}, {b}")
                else:
                    self.emit(f"{v} = {op} {a}, {rng.randrange(-3, 4) if rng.random() < 0.4 else b}")
                pool.append(v)
        return pool

    def condition(self, pool):
        loaded = [v for v in pool if v in self.loaded_from]
        src = self.pick(loaded) if loaded and self.rng.random() < self.p.lod_rate else self.pick(pool)
        c = self.val()
        self.emit(f"{c} = icmp {self.rng.choice(['gt', 'lt', 'ne'])} {src}, {self.rng.randrange(-2, 3)}")
        return c, src

    def if_stmt(self, pool, counters, depth):
        rng = self.rng
        c, src = self.condition(pool)
        if rng.random() < self.p.switch_rate:
            arms = [self.new_block() for _ in range(3)]
            join = self.new_block()
            self.term(f"switch {src}, {', '.join(arms)}")
            for a in arms:
                self.cur = a
                if rng.random() < 0.7:
                    self.stmts(pool, counters, depth + 1)
                self.term(f"br {join}")
            self.cur = join
            return pool
        then = self.new_block()
        has_else = rng.random() < 0.5
        other = self.new_block() if has_else else None
        join = self.new_block()
        self.term(f"condbr {c}, {then}, {other or join}")
        self.cur = then
        tpool = self.stmts(pool, counters, depth + 1)
        t_end = self.cur
        self.term(f"br {join}")
        if has_else:
            self.cur = other
            epool = self.stmts(pool, counters, depth + 1)
            e_end = self.cur
            self.term(f"br {join}")
        else:
            epool, e_end = pool, self.block_of_branch(c)
        self.cur = join
        new_t = [v for v in tpool if v not in pool]
        new_e = [v for v in epool if v not in pool]
        if new_t or new_e:
            a = self.pick(new_t) if new_t else self.pick(pool)
            b = self.pick(new_e) if new_e else self.pick(pool)
            m = self.val()
            self.emit(f"{m} = phi [{a}, {t_end}], [{b}, {e_end}]")
            if a in self.loaded_from and b in self.loaded_from:
                self.loaded_from[m] = self.loaded_from[a]
            return pool + [m]
        return pool

    def block_of_branch(self, c):
        for lbl, lines, _ in self.blocks:
            if any(l.startswith(f"{c} =") for l in lines):
                return lbl
        raise KeyError(c)

    def loop_stmt(self, pool, counters, depth):
        pre = self.cur
        head = self.new_block()
        body = self.new_block()
        exit_ = self.new_block()
        self.term(f"br {head}")
        j, j1, acc, acc1, cnd = (self.val() for _ in range(5))
        trips = self.rng.randint(0, 3)
        self.cur = body
        self.stmts(pool + [j, acc], counters + [j], depth + 1)
        latch_lbl = self.new_block()
        self.term(f"br {latch_lbl}")
        self.cur = latch_lbl
        self.emit(f"{j1} = add {j}, 1")
        self.emit(f"{acc1} = add {acc}, {self.pick(pool + [j])}")
        self.term(f"br {head}")
        self.cur = head
        self.emit(f"{j} = phi [0, {pre}], [{j1}, {latch_lbl}]")
        self.emit(f"{acc} = phi [{self.pick(pool)}, {pre}], [{acc1}, {latch_lbl}]")
        self.emit(f"{cnd} = icmp lt {j}, {trips}")
        self.term(f"condbr {cnd}, {body}, {exit_}")
        self.cur = exit_
        return pool + [acc]

    def program(self) -> str:
        self.cur = "E"
        self.blocks.append(["E", [], None])
        head = self.new_block()
        body = self.new_block()
        exit_ = "X"
        self.term(f"br {head}")
        self.cur = body
        self.stmts(["%i", "%N"], ["%i"], 0)
        latch = self.new_block()
        self.term(f"br {latch}")
        self.cur = latch
        self.emit("%i1 = add %i, 1")
        self.term(f"br {head}")
        self.cur = head
        self.emit(f"%i = phi [0, E], [%i1, {latch}]")
        self.emit("%c = icmp lt %i, %N")
        self.term(f"condbr %c, {body}, {exit_}")
        self.blocks.append([exit_, [], "ret"])
        lines = [f"array @{a}[{self.p.array_size}]" for a in self.arrays]
        lines += ["", f"func @gen{self.p.seed}(%N) {{"]
        order = ["E", head] + [b[0] for b in self.blocks if b[0] not in ("E", head, exit_)] + [exit_]
        for lbl in order:
            _, body_lines, t = self.block(lbl)
            lines.append(f"{lbl}:")
            lines += [f"  {l}" for l in body_lines]
            lines.append(f"  {t}")
        lines.append("}")
        return "\n".join(lines) + "\n"


def gen_program(p: GenParams) -> Program:
    """Random structured (hence reducible) loop program; deterministic per seed."""
    text = _Gen(p).program()
    prog = parse_program(text)
    diags = validate(prog)
    if diags:
        raise IRError("generator produced an invalid program: " + "; ".join(diags))
    return prog


def gen_inputs(prog: Program, count: int, seed: int, max_n: int = 6) -> list:
    rng = random.Random(seed)
    out = []
    for _ in range(count):
        arrays = {name: [rng.randint(-4, 4) for _ in range(size)] for name, size in prog.array_sizes().items()}
        out.append((arrays, {"N": rng.randint(0, max_n)}))
    return out


@dataclass
class SuiteReport:
    total: int = 0
    passed: int = 0
    skipped: int = 0
    failures: list = field(default_factory=list)
    deadlocks: int = 0
    speculated: int = 0
    skip_reasons: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d["failures"] = [v.to_json() for v in self.failures]
        return d


def random_suite(count: int, inputs_per: int = 3, seed: int = 0, cfg: Optional[PipelineConfig] = None,
                 params: Optional[GenParams] = None, sim: Optional[SimConfig] = None) -> SuiteReport:
    rep = SuiteReport()
    base = params or GenParams()
    for k in range(count):
        p = GenParams(**{**asdict(base), "seed": seed * 1_000_003 + k})
        prog = gen_program(p)
        f = prog.functions[0]
        v = differential_test(f, gen_inputs(prog, inputs_per, p.seed), cfg, sim, prog)
        rep.total += 1
        if not v.ok:
            rep.failures.append(v)
            if "deadlock" in v.reason:
                rep.deadlocks += 1
        elif v.skipped:
            rep.skipped += 1
            rep.skip_reasons[v.reason] = rep.skip_reasons.get(v.reason, 0) + 1
        else:
            rep.passed += 1
            if v.detail.get("spec"):
                rep.speculated += 1
    return rep


# ---------------------------------------------------------------- shrinking

def shrink(text: str, still_fails) -> str:
    """Greedy reduction of a failing program: drop instructions, then fold
    conditional branches, keeping only candidates that parse, validate and fail."""

    def ok(t):
        try:
            prog = parse_program(t)
        except IRError:
            return False
        return not validate(prog) and still_fails(prog)

    lines = text.splitlines()
    changed = True
    while changed:
        changed = False
        for k in range(len(lines)):
            s = lines[k].strip()
            if not s or s.endswith(":") or s.startswith(("func", "array", "}", "br ", "ret", "condbr", "switch")):
                continue
            cand = lines[:k] + lines[k + 1:]
            if ok("\n".join(cand)):
                lines, changed = cand, True
                break
        if changed:
            continue
        for k in range(len(lines)):
            s = lines[k].strip()
            if s.startswith("condbr"):
                targets = [x.strip() for x in s.split(",")[1:]]
                for t in targets:
                    cand = lines[:k] + [f"  br {t}"] + lines[k + 1:]
                    if ok("\n".join(cand)):
                        lines, changed = cand, True
                        break
            if changed:
                break
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- experiments

def kernel_inputs(name: str, n: int, rate: float, seed: int = 0) -> tuple:
    """Inputs for ``hist``/``thr``/``mm`` where a fraction ``rate`` of the
    guarded stores does not execute (exact count, shuffled positions)."""
    rng = random.Random(seed)
    prog = load_kernel(name)
    sizes = prog.array_sizes()
    fails = int(round(rate * n))
    miss = [True] * fails + [False] * (n - fails)
    rng.shuffle(miss)
    arrays = {a: [0] * s for a, s in sizes.items()}
    if name in ("hist", "fig1b"):
        arrays["idx"] = [rng.randint(0, i) for i in range(sizes["idx"])]
        arrays["A"] = [(-rng.randint(0, 9) if i < n and miss[i] else rng.randint(1, 9)) for i in range(sizes["A"])]
        args = {"N": n}
    elif name == "thr":
        t = 300
        for i in range(n):
            lo = 0 if miss[i] else t + 1
            hi = t if miss[i] else 3 * 255
            s = rng.randint(lo, hi)
            r = min(255, s)
            g = min(255, s - r)
            arrays["R"][i], arrays["G"][i], arrays["B"][i] = r, g, s - r - g
        args = {"N": n, "T": t}
    elif name == "mm":
        pool = 64
        for v in range(pool):
            arrays["M"][v] = 1
        fresh = pool
        for e in range(n):
            if miss[e]:
                arrays["EU"][e] = rng.randrange(pool)
                arrays["EV"][e] = fresh
                fresh += 1
            else:
                arrays["EU"][e], arrays["EV"][e] = fresh, fresh + 1
                fresh += 2
        args = {"N": n}
    else:
        raise ValueError(f"no input model for kernel {name!r}")
    return arrays, args


class UnreachableRate(Exception):
    code = "UNREACHABLE-RATE"


def misspec_sweep(name: str, rates=(0, 20, 40, 60, 80, 100), n: int = 1000, sim: Optional[SimConfig] = None,
                  seed: int = 0, tolerance: float = 0.02) -> dict:
    """Cycles of the speculated kernel as the share of non-executed guarded stores varies."""
    prog = load_kernel(name)
    compiled = compile_function(prog.functions[0])
    rows = {}
    for pct in rates:
        mem, args = kernel_inputs(name, n, pct / 100, seed)
        r = run_dae(compiled.pair, mem, args, sim)
        if r.termination != "completed":
            raise SimError("DEADLOCK", f"{name} at {pct}%: {r.termination}")
        if abs(r.misspec_rate - pct / 100) > tolerance:
            raise UnreachableRate(f"{name}: wanted {pct}%, got {r.misspec_rate:.1%}")
        rows[pct] = {"cycles": r.cycles, "rate": r.misspec_rate}
    cyc = [row["cycles"] for row in rows.values()]
    mean = statistics.fmean(cyc)
    sd = statistics.pstdev(cyc)
    return {"kernel": name, "rows": rows, "mean": mean, "stdev": sd, "cv": sd / mean if mean else 0.0}


def nesting_sweep(n: int, iterations: int = 1000, sim: Optional[SimConfig] = None, seed: int = 0) -> dict:
    """Poison block / call counts for the nesting template, and SPEC vs ORACLE cycles."""
    spec_prog = parse_program(nesting_template(n))
    oracle_prog = parse_program(nesting_template(n, oracle=True))
    spec = compile_function(spec_prog.functions[0])
    oracle = compile_function(oracle_prog.functions[0])
    rng = random.Random(seed)
    size = spec_prog.array_sizes()["A"]
    data = [rng.randint(-1, n + 1) for _ in range(size)]
    mem = {"A": data}
    args = {"N": iterations}
    r_spec = run_dae(spec.pair, mem, args, sim)
    r_oracle = run_dae(oracle.pair, mem, args, sim)
    return {"n": n, "poisonBlocks": len(spec.poison_blocks), "poisonCalls": spec.poison_calls,
            "expectedBlocks": n, "expectedCalls": n * (n + 1) // 2,
            "specCycles": r_spec.cycles, "oracleCycles": r_oracle.cycles,
            "program": print_program(spec_prog)}
