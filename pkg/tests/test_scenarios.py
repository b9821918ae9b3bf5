import json
from dataclasses import replace
from importlib import resources

import numpy as np
import pytest

from cloudalloc.catalog import bundled_catalog
from cloudalloc.model import PenaltyParams
from cloudalloc.scenarios import (
    InstanceFilter,
    RunOptions,
    Scenario,
    ScenarioError,
    build_problem,
    builtin_scenarios,
    grid_search,
    load_scenario,
    pareto_frontier,
    run_comparison,
    scenario_from_dict,
    scenario_to_dict,
    sensitivity,
)

FAST = RunOptions(node_budget=150, starts=1)


@pytest.fixture(scope="module")
def cat():
    return bundled_catalog()


@pytest.fixture(scope="module")
def scenarios(cat):
    return {s.name: s for s in builtin_scenarios(cat)}


def test_builtin_demands(scenarios):
    assert scenarios["S1"].demand == (8, 16, 4, 100)
    assert scenarios["S2"].demand == (16, 32, 8, 200)
    assert scenarios["S3"].demand == (24, 64, 12, 300)
    assert scenarios["S4"].demand == (32, 128, 12, 500)
    assert scenarios["S5"].demand == (32, 64, 12, 300)


def test_builtin_structure(cat, scenarios):
    cores = lambda i: cat.instances[i].capacities[0]  # noqa: E731
    mem = lambda i: cat.instances[i].capacities[1]  # noqa: E731
    s3 = scenarios["S3"]
    assert len(s3.pools) == 9
    tiers = [sum(1 for p in s3.pools if lo < cores(p.instance) <= hi) for lo, hi in ((1, 4), (4, 8), (8, 1e9))]
    assert tiers == [3, 3, 3]
    s5 = scenarios["S5"]
    assert all(cores(p.instance) <= 2 for p in s5.pools)
    assert s5.instance_filter.admits(cat, 0) is False
    s2 = scenarios["S2"]
    assert s2.existing.counts.sum() == cat.p
    assert {p.instance for p in s2.pools} == set(np.flatnonzero(s2.existing.counts))
    s4 = scenarios["S4"]
    assert all(mem(int(i)) >= 16 for i in np.flatnonzero(s4.existing.counts))
    assert all(mem(p.instance) / cores(p.instance) >= 8 for p in s4.pools)
    two = {s.name: s for s in builtin_scenarios(cat, s2_existing_per_provider=2)}["S2"]
    assert two.existing.counts.sum() == 2 * cat.p


def test_shipped_fixtures_match_builtins(cat, scenarios):
    root = resources.files("cloudalloc") / "data" / "fixtures"
    for name, s in scenarios.items():
        loaded = load_scenario(cat, str(root / f"{name.lower()}.json"))
        assert scenario_to_dict(cat, loaded) == scenario_to_dict(cat, s)


def test_fixture_roundtrip_and_validation(cat, scenarios):
    data = scenario_to_dict(cat, scenarios["S4"])
    assert scenario_to_dict(cat, scenario_from_dict(cat, json.loads(json.dumps(data)))) == data
    bad = dict(data, instance_filter={"max": {"gpu": 1}, "min": {}})
    with pytest.raises(ScenarioError):
        scenario_from_dict(cat, bad)
    with pytest.raises(ScenarioError):
        Scenario("x", (-1, 0, 0, 0))
    with pytest.raises(ScenarioError):
        Scenario("x", (1, 1, 1, 1), instance_filter=InstanceFilter(max={"cpu_cores": 0.1})).validate(cat)


def test_filter_soundness(cat, scenarios):
    s5 = scenarios["S5"]
    prob = build_problem(s5, cat, PenaltyParams())
    mask = s5.instance_filter.mask(cat)
    assert np.all(prob.upper_bounds[~mask] == 0)
    rep = run_comparison(replace(s5, repetitions=1), cat, options=FAST)
    for alloc in (rep.optimized_allocation, rep.baseline_allocation):
        assert np.all(np.asarray(alloc)[~mask] == 0)


def test_s1_optimizer_not_worse(cat, scenarios):
    rep = run_comparison(scenarios["S1"], cat, options=FAST)
    assert rep.optimized.total_cost <= rep.baseline.total_cost
    assert rep.median_of_repetitions and rep.repetitions == 5 and len(rep.repetition_costs) == 5


def test_single_repetition_and_determinism(cat, scenarios):
    s = replace(scenarios["S2"], repetitions=1)
    a = run_comparison(s, cat, seed=42, options=FAST)
    b = run_comparison(s, cat, seed=42, options=FAST)
    assert a.as_dict() == b.as_dict()
    assert not a.median_of_repetitions and a.median_repetition == 0


def test_random_expander_median(cat, scenarios):
    opts = replace(FAST, expander="random")
    rep = run_comparison(scenarios["S3"], cat, options=opts)
    costs = sorted(rep.repetition_costs)
    assert rep.baseline.total_cost == costs[(len(costs) - 1) // 2]


def test_grid_singleton_matches_comparison(cat, scenarios):
    s = scenarios["S1"]
    rows = grid_search(s, cat, {"alpha": [0.05]}, options=FAST)
    assert len(rows) == 1
    rep = run_comparison(replace(s, repetitions=1), cat, PenaltyParams(), options=FAST)
    assert rows[0]["total_cost"] == rep.optimized.total_cost
    with pytest.raises(ScenarioError):
        grid_search(s, cat, {"alpha": []})
    with pytest.raises(ScenarioError):
        grid_search(s, cat, {"delta": [1]})


def test_grid_alpha_fragmentation_nonincreasing(cat):
    # two-provider fixture: fragmentation cannot grow as consolidation gets more expensive
    s = Scenario("frag", (6, 12, 3, 80), repetitions=1)
    rows = grid_search(s, cat, {"alpha": [0.0, 0.05, 0.5]}, options=RunOptions(node_budget=400, starts=1))
    frag = [r["provider_fragmentation"] for r in rows]
    assert all(b <= a for a, b in zip(frag, frag[1:]))


def test_grid_records_infeasible_cells(cat):
    s = Scenario("tight", (8, 16, 4, 100), waste_fraction=0.0, repetitions=1)
    rows = grid_search(s, cat, {"alpha": [0.0]}, options=FAST)
    assert rows[0]["status"] in ("ok", "infeasible")


def test_pareto_cases():
    assert pareto_frontier([{"total_cost": 1, "provider_fragmentation": 1}]) == [{"total_cost": 1, "provider_fragmentation": 1}]
    both = [{"total_cost": 2, "provider_fragmentation": 1}, {"total_cost": 1, "provider_fragmentation": 2}]
    assert [r["total_cost"] for r in pareto_frontier(both)] == [1, 2]
    dom = [{"total_cost": 2, "provider_fragmentation": 2}, {"total_cost": 1, "provider_fragmentation": 1}]
    assert pareto_frontier(dom) == [{"total_cost": 1, "provider_fragmentation": 1}]


def test_pareto_brute_force():
    rng = np.random.default_rng(0)
    rows = [{"total_cost": float(rng.integers(0, 6)), "provider_fragmentation": float(rng.integers(0, 6))}
            for _ in range(40)]
    front = pareto_frontier(rows)
    for r in front:
        assert not any(o["total_cost"] <= r["total_cost"] and o["provider_fragmentation"] <= r["provider_fragmentation"]
                       and o != r and (o["total_cost"] < r["total_cost"] or o["provider_fragmentation"] < r["provider_fragmentation"])
                       for o in rows)
    for r in rows:
        if r not in front:
            assert any(f["total_cost"] <= r["total_cost"] and f["provider_fragmentation"] <= r["provider_fragmentation"]
                       for f in front)


def test_sensitivity_rows(cat, scenarios):
    params = PenaltyParams(gamma=0.0)
    rows = sensitivity(scenarios["S1"], cat, params, 0.1, options=FAST)
    by = {r["parameter"]: r for r in rows}
    assert set(by) == {"alpha", "beta1", "beta2", "beta3", "gamma"}
    # shortage is zero at every feasible point, so beta3 has no effect
    assert by["beta3"]["objective_elasticity"] == pytest.approx(0.0, abs=1e-9)
    assert by["gamma"]["note"]
    with pytest.raises(ScenarioError):
        sensitivity(scenarios["S1"], cat, params, 0.0)
