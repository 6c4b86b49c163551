"""DAE (no speculation) vs speculated cycles per kernel across memory latencies."""

import argparse
import csv
import sys

from daecc.kernels import load
from daecc.pipeline import PipelineConfig, compile_function
from daecc.sim import SimConfig, run_dae
from daecc.verify import kernel_inputs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--rate", type=float, default=0.0, help="share of guarded stores that do not run")
    ap.add_argument("--latencies", default="2,4,8,16")
    a = ap.parse_args()
    w = csv.writer(sys.stdout)
    w.writerow(["kernel", "L", "dae", "spec", "spec/dae"])
    for k in ("hist", "thr", "mm"):
        f = load(k).function()
        dae, spec = compile_function(f, PipelineConfig(speculate=False)), compile_function(f)
        mem, args = kernel_inputs(k, a.n, a.rate)
        for lat in (int(x) for x in a.latencies.split(",")):
            cfg = SimConfig(mem_latency=lat)
            d = run_dae(dae.pair, mem, args, cfg).cycles
            s = run_dae(spec.pair, mem, args, cfg).cycles
            w.writerow([k, lat, d, s, f"{s / d:.3f}"])


if __name__ == "__main__":
    main()
