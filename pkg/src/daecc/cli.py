"""daecc command line."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import shlex
import sys
from pathlib import Path

from .analysis import POLICIES, LodConfig, ensure_sites, lod_analysis
from .decouple import decouple
from .ir import IRError, Program, parse_program, print_function, print_program, to_dot
from .kernels import SOURCES
from .kernels import load as load_kernel
from .paths import PathLimitError
from .pipeline import PipelineConfig, compile_function
from .poison import PlacementError
from .sim import SimConfig, SimError, memory_from_json, pipeline_report, run_dae
from .speculate import SpeculationError, hoist_requests, select_heads
from . import verify

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_PIPELINE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--fifo-depth", type=int, default=16)
    p.add_argument("--mem-latency", type=int, default=8)
    p.add_argument("--lsq", default="4,32", help="load,store queue sizes")
    p.add_argument("--path-limit", type=int, default=100_000)
    p.add_argument("--budget", type=int, default=10_000_000)
    p.add_argument("--policy", default="same-array", choices=list(POLICIES))
    p.add_argument("--json", action="store_true")
    p.add_argument("--emit", choices=["ir", "dot", "json"], default="ir")
    p.add_argument("--out", default=".", help="directory for emitted files")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    ap = _Parser(prog="daecc", description="Decoupled access/execute compiler with speculative requests and poison.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    for name in ("analyze", "decouple", "speculate", "poison"):
        p = sub.add_parser(name)
        p.add_argument("input", help="IR file, or the name of a built-in kernel")
        _common(p)
        if name == "poison":
            p.add_argument("--no-merge", action="store_true")
    p = sub.add_parser("simulate")
    p.add_argument("input")
    p.add_argument("--mem", help='JSON {"arrays": {...}, "args": {...}}')
    p.add_argument("--no-speculate", action="store_true")
    p.add_argument("--trace", action="store_true", help="include the committed-store trace")
    _common(p)
    p = sub.add_parser("verify")
    p.add_argument("input", nargs="?", help="IR file; random programs when omitted")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--inputs", type=int, default=3)
    p.add_argument("--no-speculate", action="store_true")
    _common(p)
    p = sub.add_parser("sweep")
    p.add_argument("kind", choices=["misspec", "nesting"])
    p.add_argument("target", help="kernel name (misspec) or max depth (nesting)")
    p.add_argument("--rates", default="0,20,40,60,80,100")
    p.add_argument("--n", type=int, default=1000)
    _common(p)
    p = sub.add_parser("gen")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--blocks", type=int, default=24)
    p.add_argument("--density", type=float, default=0.35)
    p.add_argument("--lod-rate", type=float, default=0.5)
    p.add_argument("--arrays", type=int, default=2)
    _common(p)
    return ap


def _sim_config(a) -> SimConfig:
    try:
        lq, sq = (int(x) for x in a.lsq.split(","))
    except ValueError:
        raise UsageError(f"--lsq expects two integers, got {a.lsq!r}")
    try:
        return SimConfig(a.fifo_depth, a.mem_latency, lq, sq, a.budget)
    except ValueError as e:
        raise UsageError(str(e))


def _load(path: str) -> Program:
    p = Path(path)
    if p.exists():
        return parse_program(p.read_text())
    stem = p.stem if p.suffix == ".ir" else path
    if stem in SOURCES or (stem.startswith("nest") and stem[4:].isdigit()):
        return load_kernel(stem)
    raise UsageError(f"no such file or built-in kernel: {path}")


def _effective(argv, a) -> str:
    seed = os.environ.get("DAECC_SEED")
    line = "daecc " + " ".join(shlex.quote(x) for x in argv)
    return "# effective: " + line + (f" (DAECC_SEED={seed})" if seed is not None else "")


def _emit(a, out, name: str, files: dict, meta: dict) -> None:
    """files: stem -> Function. ir goes to stdout, dot/json to files in --out."""
    if a.emit == "ir" and not a.json:
        for f in files.values():
            out.write(print_function(f) + "\n")
        return
    d = Path(a.out)
    d.mkdir(parents=True, exist_ok=True)
    if a.emit == "dot":
        for stem, f in files.items():
            (d / f"{stem}.dot").write_text(to_dot(f, meta.get("smap"), meta.get("plan")))
        out.write(json.dumps({"written": [str(d / f"{s}.dot") for s in files]}) + "\n")
        return
    data = {k: v for k, v in meta.items() if k not in ("smap", "plan")}
    data.update({stem: print_function(f) for stem, f in files.items()})
    text = json.dumps(data, indent=2)
    if a.emit == "json" and not a.json:
        (d / f"{name}.json").write_text(text + "\n")
    out.write(text + "\n")


def _pcfg(a, speculate=True, merge=True) -> PipelineConfig:
    return PipelineConfig(policy=a.policy, speculate=speculate, merge=merge, path_limit=a.path_limit)


def cmd_analyze(a, out):
    f = ensure_sites(_load(a.input).function())
    rep = lod_analysis(f, LodConfig(a.policy))
    if a.json or a.emit == "json":
        out.write(rep.dumps() + "\n")
    else:
        out.write(f"chain heads: {' '.join(rep.chain_heads) or '-'}\n")
        for g, s, b in rep.control_deps:
            out.write(f"control: load {g} -> branch of {b} (source {s})\n")
        for g, x, path in rep.data_deps:
            out.write(f"data: load {g} -> request {x} via {' '.join(path)}\n")
        if rep.exit_branches:
            out.write(f"exit branches: {' '.join(rep.exit_branches)}\n")
    return EXIT_OK


def cmd_decouple(a, out):
    pair = decouple(ensure_sites(_load(a.input).function()))
    _emit(a, out, "decouple", {"agu": pair.agu, "cu": pair.cu}, {"channels": pair.chan_json()})
    return EXIT_OK


def cmd_speculate(a, out):
    f = ensure_sites(_load(a.input).function())
    rep = lod_analysis(f, LodConfig(a.policy))
    pair = decouple(f, simplify=False)
    heads, residual = select_heads(pair.agu, rep)
    agu, smap = hoist_requests(pair.agu, heads)
    rep.residual.update(residual)
    _emit(a, out, "speculate", {"agu": agu}, {"smap": smap, "specReqMap": smap.to_json(), "residual": rep.residual})
    if a.emit == "ir" and not a.json:
        out.write("; spec map: " + json.dumps(smap.to_json()) + "\n")
    return EXIT_OK


def cmd_poison(a, out):
    c = compile_function(_load(a.input).function(), _pcfg(a, merge=not a.no_merge))
    meta = {"smap": c.smap, "plan": c.plan, "specReqMap": c.smap.to_json(), "poisonPlan": c.plan.to_json(),
            "placement": c.placement.to_json(), "merges": c.merges, "residual": c.report.residual,
            "staticCheck": c.check.to_json() if c.check else None}
    _emit(a, out, "poison", {"agu": c.pair.agu, "cu": c.pair.cu}, meta)
    if c.check is not None and not c.check.ok and not c.check.skipped:
        sys.stderr.write(f"static check failed: {c.check.reason} on {c.check.path}\n")
        return EXIT_VERIFY
    return EXIT_OK


def cmd_simulate(a, out):
    prog = _load(a.input)
    if a.mem:
        mem, args = memory_from_json(Path(a.mem).read_text(), prog)
    else:
        mem, args = memory_from_json({}, prog)
    c = compile_function(prog.function(), _pcfg(a, speculate=not a.no_speculate))
    r = run_dae(c.pair, mem, args, _sim_config(a))
    if a.json or a.emit == "json":
        data = r.to_json()
        if not a.trace:
            data.pop("committed")
            data.pop("memory")
        out.write(json.dumps(data, indent=2) + "\n")
    else:
        out.write(pipeline_report(r) + "\n")
    return EXIT_OK if r.termination == "completed" else EXIT_VERIFY


def _seed(a) -> int:
    env = os.environ.get("DAECC_SEED")
    return int(env) if env is not None else a.seed


def cmd_verify(a, out):
    cfg = _pcfg(a, speculate=not a.no_speculate)
    sim = _sim_config(a)
    seed = _seed(a)
    if a.input:
        prog = _load(a.input)
        v = verify.differential_test(prog.function(), verify.gen_inputs(prog, a.count, seed), cfg, sim, prog)
        out.write(json.dumps(v.to_json(), indent=2) + "\n" if a.json else
                  f"{'PASS' if v.ok else 'FAIL'}{' (skipped: ' + v.reason + ')' if v.skipped else ''}"
                  f"{'' if v.ok else ': ' + v.reason}\n")
        return EXIT_OK if v.ok else EXIT_VERIFY
    rep = verify.random_suite(a.count, a.inputs, seed, cfg, sim=sim)
    if a.json:
        out.write(json.dumps(rep.to_json(), indent=2) + "\n")
    else:
        out.write(f"{rep.passed} passed, {rep.skipped} skipped, {len(rep.failures)} failed "
                  f"of {rep.total} programs ({rep.speculated} speculated)\n")
        for v in rep.failures[:3]:
            out.write(f"FAIL {v.reason}\n{v.reproducer}\n")
    return EXIT_OK if not rep.failures else EXIT_VERIFY


def cmd_sweep(a, out):
    sim = _sim_config(a)
    if a.kind == "misspec":
        try:
            rates = [int(x) for x in a.rates.split(",")]
        except ValueError:
            raise UsageError(f"--rates expects integers, got {a.rates!r}")
        try:
            res = verify.misspec_sweep(a.target, rates, a.n, sim, _seed(a))
        except ValueError as e:
            raise UsageError(str(e))
        rows = [{"rate": k, "cycles": v["cycles"], "achieved": round(v["rate"], 4)} for k, v in res["rows"].items()]
        summary = {"kernel": a.target, "mean": res["mean"], "stdev": res["stdev"], "cv": res["cv"]}
    else:
        if not a.target.isdigit() or int(a.target) < 1:
            raise UsageError("nesting sweep expects a depth >= 1")
        rows = []
        for n in range(1, int(a.target) + 1):
            r = verify.nesting_sweep(n, a.n, sim, _seed(a))
            r.pop("program")
            rows.append(r)
        summary = {}
    if a.json:
        out.write(json.dumps({"rows": rows, **summary}, indent=2) + "\n")
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
        out.write(buf.getvalue())
        if summary:
            out.write(f"# mean {summary['mean']:.1f} stdev {summary['stdev']:.1f} cv {summary['cv']:.2%}\n")
    return EXIT_OK


def cmd_gen(a, out):
    p = verify.GenParams(seed=_seed(a), max_depth=a.depth, block_budget=a.blocks, store_density=a.density,
                         lod_rate=a.lod_rate, arrays=a.arrays)
    out.write(print_program(verify.gen_program(p)))
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "decouple": cmd_decouple, "speculate": cmd_speculate, "poison": cmd_poison,
            "simulate": cmd_simulate, "verify": cmd_verify, "sweep": cmd_sweep, "gen": cmd_gen}


def main(argv=None, out=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out = out or sys.stdout
    try:
        a = build_parser().parse_args(argv)
        sys.stderr.write(_effective(argv, a) + "\n")
        return COMMANDS[a.cmd](a, out)
    except UsageError as e:
        sys.stderr.write(f"daecc: usage error: {e}\n")
        return EXIT_USAGE
    except (IRError, SpeculationError, PlacementError, PathLimitError, SimError, verify.UnreachableRate) as e:
        msg = str(e)
        code = getattr(e, "code", type(e).__name__)
        sys.stderr.write(f"daecc: {msg if msg.startswith(code) else code + ': ' + msg}\n")
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
