"""Differential fuzzing of the pipeline on random programs, in parallel."""

import argparse
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

from daecc.pipeline import PipelineConfig
from daecc.verify import GenParams, random_suite


def _chunk(job):
    seed, count, params, speculate = job
    rep = random_suite(count, 3, seed, PipelineConfig(speculate=speculate), GenParams(**params))
    return rep.to_json()


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=1000)
    ap.add_argument("--jobs", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--depth", type=int, default=2)
    ap.add_argument("--lod-rate", type=float, default=0.5)
    ap.add_argument("--density", type=float, default=0.35)
    ap.add_argument("--no-speculate", action="store_true")
    a = ap.parse_args()
    params = asdict(GenParams(max_depth=a.depth, lod_rate=a.lod_rate, store_density=a.density))
    per = -(-a.count // a.jobs)
    jobs = [(a.seed * 1000 + k, min(per, a.count - k * per), params, not a.no_speculate) for k in range(a.jobs)]
    total = {"total": 0, "passed": 0, "skipped": 0, "deadlocks": 0, "speculated": 0, "failures": []}
    with ProcessPoolExecutor(a.jobs) as ex:
        for rep in ex.map(_chunk, [j for j in jobs if j[1] > 0]):
            for k in ("total", "passed", "skipped", "deadlocks", "speculated"):
                total[k] += rep[k]
            total["failures"] += rep["failures"]
    print(json.dumps({k: v for k, v in total.items() if k != "failures"}))
    for v in total["failures"][:3]:
        print(v["reason"])
        print(v["reproducer"])
    raise SystemExit(1 if total["failures"] else 0)


if __name__ == "__main__":
    main()
