"""The five bundled evaluation scenarios, the comparison pipeline and parameter studies."""

from __future__ import annotations

import itertools
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .ca_sim import CaError, NodePool, pools_from_list, pools_to_list, run_baseline
from .catalog import InstanceCatalog
from .kkt import kkt_report
from .metrics import EvaluationMetrics, compare, evaluate, radar_data
from .model import Allocation, AllocationProblem, PenaltyParams, ProblemError, default_upper_bounds
from .solver_continuous import BarrierSettings, InfeasibleProblem, multi_start
from .solver_integer import SearchBudget, SearchExhausted, solve_integer

log = logging.getLogger(__name__)

PARAM_NAMES = ("alpha", "beta1", "beta2", "beta3", "gamma")
DEFAULT_WASTE_FRACTION = 1.0
DEFAULT_NODE_BUDGET = 400


class ScenarioError(ValueError):
    """Invalid scenario fixture."""


class ScenarioFailed(RuntimeError):
    """A solver or simulator failure, tagged with the scenario name."""

    def __init__(self, scenario: str, cause: Exception):
        super().__init__(f"scenario {scenario}: {cause}")
        self.scenario = scenario
        self.cause = cause


@dataclass(frozen=True)
class InstanceFilter:
    """Per-resource inclusive capacity limits, e.g. ``max={"cpu_cores": 2}``."""

    max: dict = field(default_factory=dict)
    min: dict = field(default_factory=dict)

    def check(self, catalog: InstanceCatalog) -> None:
        for name in list(self.max) + list(self.min):
            if name not in catalog.schema.names:
                raise ScenarioError(f"filter references unknown resource {name!r}")

    def admits(self, catalog: InstanceCatalog, i: int) -> bool:
        inst = catalog.instances[i]
        ok = all(inst.capacities[catalog.schema.index(r)] <= v for r, v in self.max.items())
        return ok and all(inst.capacities[catalog.schema.index(r)] >= v for r, v in self.min.items())

    def mask(self, catalog: InstanceCatalog) -> np.ndarray:
        return np.array([self.admits(catalog, i) for i in range(catalog.n)], dtype=bool)

    def as_dict(self) -> dict:
        return {"max": dict(self.max), "min": dict(self.min)}


@dataclass(frozen=True)
class Scenario:
    name: str
    demand: tuple
    pools: tuple = ()
    existing: Optional[Allocation] = None
    instance_filter: Optional[InstanceFilter] = None
    max_deviation: Optional[float] = None
    repetitions: int = 5
    waste_fraction: float = DEFAULT_WASTE_FRACTION
    description: str = ""

    def __post_init__(self):
        d = tuple(float(v) for v in self.demand)
        if any(v < 0 or not math.isfinite(v) for v in d):
            raise ScenarioError(f"{self.name}: demand must be finite and nonnegative")
        object.__setattr__(self, "demand", d)
        object.__setattr__(self, "pools", tuple(self.pools))
        if self.repetitions < 1:
            raise ScenarioError(f"{self.name}: repetitions must be >= 1")
        if self.waste_fraction < 0:
            raise ScenarioError(f"{self.name}: waste_fraction must be nonnegative")

    def validate(self, catalog: InstanceCatalog) -> None:
        if len(self.demand) != catalog.m:
            raise ScenarioError(f"{self.name}: demand has {len(self.demand)} entries, catalog has {catalog.m} resources")
        for p in self.pools:
            if not 0 <= p.instance < catalog.n:
                raise ScenarioError(f"{self.name}: pool instance {p.instance} outside catalog")
        if self.existing is not None and len(self.existing) != catalog.n:
            raise ScenarioError(f"{self.name}: existing allocation has wrong length")
        if self.instance_filter is not None:
            self.instance_filter.check(catalog)
            mask = self.instance_filter.mask(catalog)
            if not mask.any():
                raise ScenarioError(f"{self.name}: no catalog instance passes the filter")
            if any(not mask[p.instance] for p in self.pools):
                raise ScenarioError(f"{self.name}: a pool type violates the scenario filter")
            if self.existing is not None and np.any(self.existing.counts[~mask] > 0):
                raise ScenarioError(f"{self.name}: an existing instance violates the scenario filter")

    def scaled(self, factor: float) -> "Scenario":
        return replace(self, name=f"{self.name}x{factor:g}", demand=tuple(v * factor for v in self.demand))


# --- fixtures ------------------------------------------------------------------

def _caps(catalog: InstanceCatalog):
    try:
        cpu = catalog.schema.index("cpu_cores")
        mem = catalog.schema.index("memory_gb")
    except KeyError as exc:
        raise ScenarioError(f"built-in scenarios need cpu_cores and memory_gb: {exc}") from None
    K = np.array([inst.capacities for inst in catalog.instances], dtype=float)
    return K[:, cpu], K[:, mem]


def _cheapest_per_core(catalog: InstanceCatalog, members, count: int) -> list:
    cores, _ = _caps(catalog)
    ranked = sorted(members, key=lambda i: (catalog.instances[i].hourly_cost / cores[i], i))
    return ranked[:count]


def _one_per_provider(catalog: InstanceCatalog, members, per_provider: int = 1) -> np.ndarray:
    x = np.zeros(catalog.n)
    for prov in catalog.providers:
        cands = [i for i in members if catalog.instances[i].provider_id == prov]
        if not cands:
            raise ScenarioError(f"provider {prov} has no instance eligible for pre-allocation")
        best = min(cands, key=lambda i: (catalog.instances[i].hourly_cost, i))
        x[best] = per_provider
    return x


def builtin_scenarios(catalog: InstanceCatalog, s2_existing_per_provider: int = 1,
                      repetitions: int = 5) -> list:
    """Five fixtures built from the catalog's instance shapes.

    Families are recognized by memory per core: general purpose 3 to 6 GB,
    memory optimized 8 GB or more.
    """
    cores, mem = _caps(catalog)
    ratio = np.where(cores > 0, mem / np.where(cores > 0, cores, 1.0), 0.0)
    idx = np.arange(catalog.n)

    def need(members, what):
        members = [int(i) for i in members]
        if not members:
            raise ScenarioError(f"catalog has no {what}")
        return members

    general = need(idx[(ratio >= 3) & (ratio < 6) & (cores >= 2) & (cores <= 8)], "general-purpose 2-8 core types")
    s1 = Scenario("S1", (8, 16, 4, 100), pools=tuple(NodePool(i) for i in general), repetitions=repetitions,
                  description="basic web application, greenfield")

    small = need(idx[(cores == 2)], "2-core types") if np.any(cores == 2) else need(idx[cores <= 2], "small types")
    x2 = _one_per_provider(catalog, small, s2_existing_per_provider)
    s2 = Scenario("S2", (16, 32, 8, 200), pools=tuple(NodePool(int(i)) for i in np.flatnonzero(x2)),
                  existing=Allocation(x2, integral=True), repetitions=repetitions,
                  description="scaling an existing deployment")

    tiers = [
        need(idx[(cores >= 2) & (cores <= 4)], "small tier types"),
        need(idx[(cores > 4) & (cores <= 8)], "medium tier types"),
        need(idx[cores > 8], "large tier types"),
    ]
    s3_pools = [i for tier in tiers for i in _cheapest_per_core(catalog, tier, 3)]
    s3 = Scenario("S3", (24, 64, 12, 300), pools=tuple(NodePool(i) for i in s3_pools),
                  instance_filter=InstanceFilter(min={"cpu_cores": 2}), repetitions=repetitions,
                  description="mixed workload over nine tiered pools")

    high_mem = need(idx[mem >= 16], "high-memory types")
    x4 = _one_per_provider(catalog, high_mem)
    mem_opt = need(idx[ratio >= 8], "memory-optimized types")
    s4 = Scenario("S4", (32, 128, 12, 500), pools=tuple(NodePool(i) for i in mem_opt),
                  existing=Allocation(x4, integral=True), repetitions=repetitions,
                  description="memory-intensive workload with existing high-memory nodes")

    tiny = need(idx[cores <= 2], "types with 2 or fewer cores")
    s5 = Scenario("S5", (32, 64, 12, 300), pools=tuple(NodePool(i) for i in tiny),
                  instance_filter=InstanceFilter(max={"cpu_cores": 2}), repetitions=repetitions,
                  description="only instances with 2 or fewer cores")
    out = [s1, s2, s3, s4, s5]
    for s in out:
        s.validate(catalog)
    return out


def scenario_to_dict(catalog: InstanceCatalog, s: Scenario) -> dict:
    existing = None
    if s.existing is not None:
        existing = [{"provider": catalog.instances[i].provider_id, "instance_sku": catalog.instances[i].sku,
                     "count": int(s.existing.counts[i])} for i in np.flatnonzero(s.existing.counts)]
    return {
        "name": s.name,
        "description": s.description,
        "demand": list(s.demand),
        "pools": pools_to_list(catalog, s.pools),
        "existing": existing,
        "instance_filter": None if s.instance_filter is None else s.instance_filter.as_dict(),
        "max_deviation": s.max_deviation,
        "repetitions": s.repetitions,
        "waste_fraction": s.waste_fraction,
    }


def scenario_from_dict(catalog: InstanceCatalog, data: dict) -> Scenario:
    try:
        existing = None
        if data.get("existing"):
            x = np.zeros(catalog.n)
            for item in data["existing"]:
                x[catalog.find(item["provider"], item["instance_sku"])] += int(item["count"])
            existing = Allocation(x, integral=True)
        filt = data.get("instance_filter")
        s = Scenario(
            name=data["name"],
            demand=tuple(data["demand"]),
            pools=tuple(pools_from_list(catalog, data.get("pools", []))),
            existing=existing,
            instance_filter=None if filt is None else InstanceFilter(filt.get("max", {}), filt.get("min", {})),
            max_deviation=data.get("max_deviation"),
            repetitions=int(data.get("repetitions", 5)),
            waste_fraction=float(data.get("waste_fraction", DEFAULT_WASTE_FRACTION)),
            description=data.get("description", ""),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (ScenarioError, CaError)):
            raise
        raise ScenarioError(f"malformed scenario fixture: {exc}") from None
    s.validate(catalog)
    return s


def load_scenario(catalog: InstanceCatalog, path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(catalog, json.load(fh))


# --- comparison pipeline ---------------------------------------------------------

@dataclass(frozen=True)
class RunOptions:
    expander: str = "least_waste"
    starts: int = 4
    node_budget: Optional[int] = DEFAULT_NODE_BUDGET
    time_budget: Optional[float] = None
    barrier: BarrierSettings = field(default_factory=BarrierSettings)

    def budget(self) -> SearchBudget:
        return SearchBudget(max_nodes=self.node_budget, time_limit=self.time_budget)


def build_problem(scenario: Scenario, catalog: InstanceCatalog, params: PenaltyParams) -> AllocationProblem:
    d = np.asarray(scenario.demand, dtype=float)
    waste = scenario.waste_fraction * d
    ub = np.array(default_upper_bounds(catalog_K(catalog), d + waste))
    if scenario.instance_filter is not None:
        ub[~scenario.instance_filter.mask(catalog)] = 0.0
    return AllocationProblem(catalog, d, waste=waste, params=params, current=scenario.existing,
                             max_deviation=scenario.max_deviation, upper_bounds=ub)


def catalog_K(catalog: InstanceCatalog) -> np.ndarray:
    from .catalog import composition_matrix
    return composition_matrix(catalog)


@dataclass
class ComparisonReport:
    scenario: str
    baseline: EvaluationMetrics
    optimized: EvaluationMetrics
    comparison: dict
    baseline_allocation: list
    optimized_allocation: list
    baseline_detail: dict
    solver: dict
    median_of_repetitions: bool
    repetitions: int
    median_repetition: int
    repetition_costs: list
    radar: dict
    timings: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        """Deterministic content; wall-clock timings are kept out and reported separately."""
        return {
            "scenario": self.scenario,
            "baseline": self.baseline.as_dict(),
            "optimized": self.optimized.as_dict(),
            "comparison": self.comparison,
            "baseline_allocation": self.baseline_allocation,
            "optimized_allocation": self.optimized_allocation,
            "baseline_detail": self.baseline_detail,
            "solver": self.solver,
            "median_of_repetitions": self.median_of_repetitions,
            "repetitions": self.repetitions,
            "median_repetition": self.median_repetition,
            "repetition_costs": self.repetition_costs,
            "radar": self.radar,
        }


def _continuous_report(problem: AllocationProblem, options: RunOptions, seed: int) -> dict:
    try:
        sol = multi_start(problem, options.barrier, starts=options.starts, seed=seed)
    except InfeasibleProblem as exc:
        return {"status": "infeasible", "detail": str(exc)}
    rep = kkt_report(problem, sol.x_star, sol.multipliers)
    return {
        "status": "converged" if sol.converged else "not_converged",
        "mode": sol.mode,
        "value": sol.value,
        "x_star": sol.x_star.counts.tolist(),
        "gap_bound": sol.gap_bound if math.isfinite(sol.gap_bound) else None,
        "kkt_scaled": rep.scaled(),
    }


def run_comparison(scenario: Scenario, catalog: InstanceCatalog, params: PenaltyParams | None = None,
                   seed: int = 42, options: RunOptions | None = None) -> ComparisonReport:
    """CA baseline and optimizer on identical inputs, repeated; the median-cost repetition is reported.

    Repetition ``k`` seeds the random expander and the multi-start jitter with
    ``seed + k``. The integer search does not depend on the seed, so it runs
    once. Repetitions are ranked by (baseline cost, optimized cost, k) and
    the lower middle one is reported.
    """
    params = params or PenaltyParams()
    options = options or RunOptions()
    scenario.validate(catalog)
    problem = build_problem(scenario, catalog, params)
    timings = {}
    t0 = time.perf_counter()
    try:
        integer = solve_integer(problem, options.barrier, options.budget())
    except (InfeasibleProblem, ProblemError, SearchExhausted) as exc:
        raise ScenarioFailed(scenario.name, exc) from exc
    timings["integer_secs"] = time.perf_counter() - t0
    opt_metrics = evaluate(catalog, problem, integer.x_hat)

    reps = []
    t0 = time.perf_counter()
    for k in range(scenario.repetitions):
        try:
            ca = run_baseline(catalog, scenario.pools, scenario.existing, problem.demand, options.expander, seed + k)
        except CaError as exc:
            raise ScenarioFailed(scenario.name, exc) from exc
        reps.append((evaluate(catalog, problem, ca.allocation).total_cost, k, ca))
    timings["baseline_secs"] = time.perf_counter() - t0
    order = sorted(reps, key=lambda r: (r[0], opt_metrics.total_cost, r[1]))
    base_cost, median_k, ca = order[(len(order) - 1) // 2]
    if not ca.satisfied:
        log.warning("%s: CA baseline does not cover demand", scenario.name)
    base_metrics = evaluate(catalog, problem, ca.allocation)

    t0 = time.perf_counter()
    continuous = _continuous_report(problem, options, seed + median_k)
    timings["continuous_secs"] = time.perf_counter() - t0
    return ComparisonReport(
        scenario=scenario.name,
        baseline=base_metrics,
        optimized=opt_metrics,
        comparison=compare(base_metrics, opt_metrics).as_dict(),
        baseline_allocation=ca.allocation.counts.tolist(),
        optimized_allocation=integer.x_hat.counts.tolist(),
        baseline_detail={"satisfied": ca.satisfied, "expander": options.expander,
                         "pools": pools_to_list(catalog, ca.final_pools), "scale_events": len(ca.scale_events)},
        solver={"integer": integer.as_dict(), "continuous": continuous, "params": params.as_dict()},
        median_of_repetitions=scenario.repetitions > 1,
        repetitions=scenario.repetitions,
        median_repetition=median_k,
        repetition_costs=[r[0] for r in reps],
        radar={"baseline": radar_data(base_metrics, catalog.schema), "optimized": radar_data(opt_metrics, catalog.schema)},
        timings=timings,
    )


def scaling_sweep(scenario: Scenario, catalog: InstanceCatalog, factors: Sequence[float] = (1, 2, 4, 8),
                  params: PenaltyParams | None = None, seed: int = 42, options: RunOptions | None = None) -> list:
    """CA and optimizer cost as the scenario's demand is multiplied by each factor."""
    rows = []
    for f in factors:
        rep = run_comparison(scenario.scaled(f), catalog, params, seed, options)
        rows.append({"factor": float(f), "ca_cost": rep.baseline.total_cost, "optimizer_cost": rep.optimized.total_cost,
                     "cost_gap": rep.baseline.total_cost - rep.optimized.total_cost,
                     "integer_status": rep.solver["integer"]["status"]})
    return rows


# --- parameter studies ---------------------------------------------------------------

def _cell_row(values: dict, rep: Optional[ComparisonReport], error: str | None = None) -> dict:
    row = dict(values)
    if rep is None:
        row.update({"status": "infeasible", "detail": error, "total_cost": None, "objective": None,
                    "mean_utilization": None, "instance_diversity": None, "provider_fragmentation": None,
                    "mean_overprovision_pct": None, "baseline_cost": None, "cost_savings_pct": None})
        return row
    m = rep.optimized
    row.update({
        "status": "ok",
        "detail": rep.solver["integer"]["status"],
        "total_cost": m.total_cost,
        "objective": rep.solver["integer"]["breakdown"]["total"],
        "mean_utilization": m.mean_utilization,
        "instance_diversity": m.instance_diversity,
        "provider_fragmentation": m.provider_fragmentation,
        "mean_overprovision_pct": m.mean_overprovision_pct,
        "baseline_cost": rep.baseline.total_cost,
        "cost_savings_pct": rep.comparison["cost_savings_pct"],
    })
    return row


def grid_search(scenario: Scenario, catalog: InstanceCatalog, grid: dict, base: PenaltyParams | None = None,
                seed: int = 42, options: RunOptions | None = None) -> list:
    """Cartesian sweep in (alpha, beta1, beta2, beta3, gamma) order, one repetition per cell.

    Parameters absent from ``grid`` keep their ``base`` value.
    """
    base = base or PenaltyParams()
    unknown = set(grid) - set(PARAM_NAMES)
    if unknown:
        raise ScenarioError(f"unknown grid parameters: {sorted(unknown)}")
    axes = []
    for name in PARAM_NAMES:
        values = list(grid.get(name, [getattr(base, name)]))
        if not values:
            raise ScenarioError(f"grid dimension {name} is empty")
        axes.append([float(v) for v in values])
    single = replace(scenario, repetitions=1)
    rows = []
    for combo in itertools.product(*axes):
        values = dict(zip(PARAM_NAMES, combo))
        try:
            params = PenaltyParams(**values)
            rep = run_comparison(single, catalog, params, seed, options)
            rows.append(_cell_row(values, rep))
        except (ScenarioFailed, ProblemError) as exc:
            rows.append(_cell_row(values, None, str(exc)))
    return rows


def pareto_frontier(rows: Sequence[dict], objectives: tuple = ("total_cost", "provider_fragmentation")) -> list:
    """Rows not dominated under minimization of both objectives, stably sorted by the first."""
    a, b = objectives
    for r in rows:
        if a not in r or b not in r:
            raise ScenarioError(f"rows lack objective columns {objectives}")
    pts = [r for r in rows if r[a] is not None and r[b] is not None]
    keep = []
    for r in pts:
        dominated = any(o[a] <= r[a] and o[b] <= r[b] and (o[a] < r[a] or o[b] < r[b]) for o in pts)
        if not dominated:
            keep.append(r)
    return sorted(keep, key=lambda r: r[a])


def sensitivity(scenario: Scenario, catalog: InstanceCatalog, params: PenaltyParams | None = None,
                perturbation: float = 0.1, seed: int = 42, options: RunOptions | None = None) -> list:
    """Central elasticities (dC/C)/(dtheta/theta) of cost and objective for each penalty parameter.

    A parameter at zero has no relative step; it is stepped up to
    ``perturbation`` in absolute terms and the one-sided semi-elasticity
    (dC/C)/dtheta is reported with a note.
    """
    if not 0 < perturbation < 1:
        raise ScenarioError("perturbation must lie in (0, 1)")
    params = params or PenaltyParams()
    single = replace(scenario, repetitions=1)

    def run(p: PenaltyParams):
        rep = run_comparison(single, catalog, p, seed, options)
        return rep.optimized.total_cost, rep.solver["integer"]["breakdown"]["total"]

    cost0, obj0 = run(params)
    out = []
    for name in PARAM_NAMES:
        theta = getattr(params, name)
        row = {"parameter": name, "value": theta, "note": ""}
        if theta == 0:
            up = run(replace(params, **{name: perturbation}))
            row["cost_elasticity"] = (up[0] - cost0) / cost0 / perturbation if cost0 else None
            row["objective_elasticity"] = (up[1] - obj0) / abs(obj0) / perturbation if obj0 else None
            row["note"] = "one-sided absolute step from zero"
        else:
            up = run(replace(params, **{name: theta * (1 + perturbation)}))
            down = run(replace(params, **{name: theta * (1 - perturbation)}))
            row["cost_elasticity"] = (up[0] - down[0]) / cost0 / (2 * perturbation) if cost0 else None
            row["objective_elasticity"] = (up[1] - down[1]) / abs(obj0) / (2 * perturbation) if obj0 else None
        out.append(row)
    return out


def write_fixtures(catalog: InstanceCatalog, directory: str) -> list:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for s in builtin_scenarios(catalog):
        path = os.path.join(directory, f"{s.name.lower()}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(scenario_to_dict(catalog, s), fh, indent=2)
            fh.write("\n")
        paths.append(path)
    return paths
