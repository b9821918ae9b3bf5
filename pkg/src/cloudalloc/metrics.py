"""Evaluation metrics for an allocation and optimizer-vs-baseline comparison rows."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .catalog import InstanceCatalog, ResourceSchema
from .model import AllocationProblem, counts_of


def _clean(v: float):
    return None if isinstance(v, float) and math.isnan(v) else v


@dataclass(frozen=True)
class EvaluationMetrics:
    """Cost, utilization (demand / provided), type and provider counts, over-provisioning.

    Undefined entries are NaN: utilization where a demanded resource has no
    provision, over-provisioning where demand is zero.
    """

    total_cost: float
    mean_utilization: float
    per_resource_utilization: list
    instance_diversity: int
    provider_fragmentation: int
    mean_overprovision_pct: float
    per_resource_overprovision_pct: list
    shortage: bool = False
    provided: list = field(default_factory=list)
    demand: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "total_cost": self.total_cost,
            "mean_utilization": _clean(self.mean_utilization),
            "per_resource_utilization": [_clean(v) for v in self.per_resource_utilization],
            "instance_diversity": self.instance_diversity,
            "provider_fragmentation": self.provider_fragmentation,
            "mean_overprovision_pct": _clean(self.mean_overprovision_pct),
            "per_resource_overprovision_pct": [_clean(v) for v in self.per_resource_overprovision_pct],
            "shortage": self.shortage,
            "provided": list(self.provided),
            "demand": list(self.demand),
        }


def _nanmean(values) -> float:
    arr = np.asarray(values, dtype=float)
    arr = arr[~np.isnan(arr)]
    return float(arr.mean()) if arr.size else math.nan


def evaluate(catalog: InstanceCatalog, problem: AllocationProblem, x) -> EvaluationMetrics:
    xv = counts_of(x, problem.n)
    d = problem.demand
    provided = problem.K @ xv
    util = np.full(problem.m, math.nan)
    both_zero = (provided == 0) & (d == 0)
    util[both_zero] = 0.0
    ok = provided > 0
    util[ok] = np.minimum(1.0, d[ok] / provided[ok])
    over = np.full(problem.m, math.nan)
    pos = d > 0
    over[pos] = (provided[pos] - d[pos]) / d[pos] * 100.0
    z = problem.E @ xv
    return EvaluationMetrics(
        total_cost=float(problem.c @ xv),
        mean_utilization=_nanmean(util),
        per_resource_utilization=util.tolist(),
        instance_diversity=int(np.count_nonzero(xv > 0)),
        provider_fragmentation=int(np.count_nonzero(z > 0)),
        mean_overprovision_pct=_nanmean(over),
        per_resource_overprovision_pct=over.tolist(),
        shortage=bool(np.any(provided < d)),
        provided=provided.tolist(),
        demand=d.tolist(),
    )


SCALAR_METRICS = ("total_cost", "mean_utilization", "instance_diversity", "provider_fragmentation",
                  "mean_overprovision_pct")


@dataclass(frozen=True)
class ComparisonRow:
    cost_savings_pct: float | None
    deltas: dict  # optimized minus baseline

    def as_dict(self) -> dict:
        return {"cost_savings_pct": self.cost_savings_pct, "deltas": {k: _clean(v) for k, v in self.deltas.items()}}


def compare(baseline: EvaluationMetrics, optimized: EvaluationMetrics) -> ComparisonRow:
    savings = None
    if baseline.total_cost != 0:
        savings = (baseline.total_cost - optimized.total_cost) / baseline.total_cost * 100.0
    deltas = {k: float(getattr(optimized, k)) - float(getattr(baseline, k)) for k in SCALAR_METRICS}
    return ComparisonRow(savings, deltas)


def radar_data(metrics: EvaluationMetrics, schema: ResourceSchema, demand=None) -> dict:
    """Per-resource (demand, provided, utilization), normalized by demand.

    Resources with zero demand cannot be normalized and are listed in ``omitted``.
    """
    d = np.asarray(metrics.demand if demand is None else demand, dtype=float)
    series, omitted = [], []
    for r, name in enumerate(schema.names):
        if d[r] <= 0:
            omitted.append(f"{name}: zero demand, no normalization")
            continue
        series.append({
            "resource": name,
            "demand": float(d[r]),
            "provided": float(metrics.provided[r]),
            "utilization": _clean(metrics.per_resource_utilization[r]),
            "provided_normalized": float(metrics.provided[r]) / float(d[r]),
        })
    return {"series": series, "omitted": omitted}
