"""analyze -> decouple -> speculate -> poison -> merge, as one call."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .analysis import LodConfig, LodReport, ensure_sites, lod_analysis
from .decouple import DaePair, decouple, finalize
from .ir import Function
from .paths import Verdict
from .poison import (PlacementError, PlacementRecord, PoisonPlan, apply_poison, check_lemma1,
                     hoist_load_consumes, merge_poison_blocks, plan_poisons)
from .speculate import SpecReqMap, hoist_requests, select_heads, validate_speculation

STAGES = ("analyze", "decouple", "speculate", "poison", "merge")


@dataclass
class PipelineConfig:
    policy: str = "same-array"
    speculate: bool = True
    merge: bool = True
    path_limit: int = 100_000
    simplify: bool = True


@dataclass
class Compiled:
    original: Function
    report: LodReport
    pair: DaePair
    smap: SpecReqMap = field(default_factory=SpecReqMap)
    plan: PoisonPlan = field(default_factory=PoisonPlan)
    placement: PlacementRecord = field(default_factory=PlacementRecord)
    merges: int = 0
    check: Optional[Verdict] = None
    stages: dict = field(default_factory=dict)  # stage -> (agu, cu) snapshots

    @property
    def poison_blocks(self) -> list:
        live = {b.id for b in self.pair.cu.blocks}
        return [b for b in self.placement.poison_blocks if b in live]

    @property
    def poison_calls(self) -> int:
        return sum(1 for i in self.pair.cu.instructions() if i.is_poison)


def _speculate(f: Function, base: DaePair, heads: list, cfg: PipelineConfig) -> dict:
    agu, smap = hoist_requests(base.agu, heads)
    v = validate_speculation(base.agu, agu, smap, cfg.path_limit)
    if not v.ok:
        raise PlacementError(f"speculation check failed: {v.reason}")
    cu = hoist_load_consumes(base.cu, smap)
    plan = plan_poisons(cu, smap, cfg.path_limit)
    cu_p, rec = apply_poison(cu, plan, smap)
    merges = 0
    stages = {"speculate": (agu, cu), "poison": (agu, cu_p)}
    if cfg.merge:
        before = check_lemma1(f, agu, cu_p, cfg.path_limit)
        if not before.ok:
            raise PlacementError(f"channel check before merging: {before.reason} on {before.path}")
        cu_p, merges = merge_poison_blocks(cu_p)
        stages["merge"] = (agu, cu_p)
    check = check_lemma1(f, agu, cu_p, cfg.path_limit)
    if not check.ok:
        raise PlacementError(f"channel check: {check.reason} on {check.path}")
    return dict(agu=agu, cu=cu_p, smap=smap, plan=plan, rec=rec, merges=merges, check=check, stages=stages)


def compile_function(f: Function, cfg: Optional[PipelineConfig] = None) -> Compiled:
    """Full pipeline. Heads that cannot be placed safely fall back to plain
    decoupling and are listed in ``report.residual``."""
    cfg = cfg or PipelineConfig()
    f = ensure_sites(f)
    report = lod_analysis(f, LodConfig(cfg.policy))
    base = decouple(f, simplify=False)
    stages = {"decouple": (base.agu, base.cu)}
    heads, residual = select_heads(base.agu, report) if cfg.speculate else ([], {})
    report.residual.update(residual)
    if not cfg.speculate:
        for h in report.chain_heads:
            report.residual[h] = "SPECULATION-DISABLED"
    res = None
    while heads:
        try:
            res = _speculate(f, base, heads, cfg)
            break
        except PlacementError as e:
            # retire the latest head and retry; each retry strictly shrinks the set
            report.residual[heads[-1]] = f"PLACEMENT: {e}"
            heads = heads[:-1]
    if res is None:
        pair = decouple(f, simplify=cfg.simplify)
        out = Compiled(f, report, pair, stages=stages)
        out.check = check_lemma1(f, pair.agu, pair.cu, cfg.path_limit)
        return out
    pair = DaePair(res["agu"], res["cu"], base.sites, f)
    for bb, reqs in res["smap"].items():
        for r in reqs:
            pair.sites[r.id].hoisted_to.append(bb)
    if cfg.simplify:
        pair = finalize(pair)
    else:
        pair.refresh()
    stages.update(res["stages"])
    check = check_lemma1(f, pair.agu, pair.cu, cfg.path_limit)
    return Compiled(f, report, pair, res["smap"], res["plan"], res["rec"], res["merges"], check, stages)
