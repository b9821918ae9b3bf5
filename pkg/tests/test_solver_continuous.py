import itertools

import numpy as np
import pytest

from cloudalloc.catalog import InstanceCatalog, InstanceType, ResourceSchema, bundled_catalog, composition_matrix
from cloudalloc.kkt import kkt_report
from cloudalloc.model import Allocation, AllocationProblem, PenaltyParams, constraint_residuals, objective
from cloudalloc.solver_continuous import (
    BarrierSettings,
    InfeasibleProblem,
    multi_start,
    phase_one,
    solve_relaxed,
)

from .helpers import ab_catalog

LINEAR = PenaltyParams(alpha=0.0, gamma=0.0, beta3=0.0)


def lp_grid_optimum(prob, step=1e-3, hi=8.0):
    # A's count fixed, B's cheapest feasible count is the smallest grid value meeting the rows
    K, c, lo, up = prob.K, prob.c, prob.demand - prob.uncertainty, prob.demand + prob.waste
    best = np.inf
    for a in np.arange(0, hi + step / 2, step):
        need = np.max((lo - K[:, 0] * a) / K[:, 1])
        b = max(0.0, np.ceil(need / step - 1e-9) * step)
        if np.all(K @ [a, b] <= up + 1e-12):
            best = min(best, c @ [a, b])
    return best


def test_linear_ab_matches_grid():
    prob = AllocationProblem(ab_catalog(), (8, 16), waste=(8, 32), params=LINEAR)
    sol = solve_relaxed(prob)
    assert sol.converged and sol.mode == "barrier"
    assert prob.c @ sol.x_star.counts == pytest.approx(lp_grid_optimum(prob), abs=1e-3)
    assert sol.x_star.counts == pytest.approx([4, 0], abs=1e-5)
    assert sol.gap_bound <= BarrierSettings().outer_tolerance


def test_zero_demand_returns_origin():
    prob = AllocationProblem(ab_catalog(), (0, 0), waste=(0, 0))
    sol = solve_relaxed(prob)
    assert np.max(np.abs(sol.x_star.counts)) <= BarrierSettings().outer_tolerance


def test_phase_one_with_slack():
    prob = AllocationProblem(ab_catalog(), (0, 0), uncertainty=(1, 1), waste=(1, 1))
    x = phase_one(prob).counts
    Kx = prob.K @ x
    assert np.all(x > 0) and np.all(Kx < prob.demand + prob.waste) and np.all(Kx > prob.demand - prob.uncertainty)


def test_empty_interior_goes_to_penalty_mode():
    prob = AllocationProblem(ab_catalog(), (8, 16), waste=(0, 0), params=LINEAR)
    with pytest.raises(InfeasibleProblem):
        phase_one(prob)
    sol = solve_relaxed(prob)
    assert sol.mode == "penalty"
    assert prob.K @ sol.x_star.counts == pytest.approx([8, 16], abs=1e-3)


def test_infeasible_names_constraint():
    # memory cap of 1 GB cannot coexist with 8 cores of demand
    prob = AllocationProblem(ab_catalog(), (8, 0), waste=(0, 1))
    with pytest.raises(InfeasibleProblem) as err:
        solve_relaxed(prob)
    assert err.value.violation > 0 and err.value.constraint


def test_scenario1_on_bundled_catalog():
    cat = bundled_catalog()
    prob = AllocationProblem(cat, (8, 16, 4, 100), waste=(8, 16, 4, 100))
    sol = solve_relaxed(prob)
    assert sol.converged and sol.breakdown.shortage_penalty <= 1e-6
    assert np.all(sol.multipliers.lam >= 0) and np.all(sol.multipliers.nu >= 0) and np.all(sol.multipliers.omega >= 0)


def test_scenario5_phase_one_feasible():
    cat = bundled_catalog()
    ub = np.array([30.0 if i.capacities[0] <= 2 else 0.0 for i in cat.instances])
    prob = AllocationProblem(cat, (32, 64, 12, 300), waste=(32, 64, 12, 300), upper_bounds=ub)
    x = phase_one(prob).counts
    assert constraint_residuals(prob, x).feasible(0)


def test_multi_start_single_equals_solve_relaxed():
    prob = AllocationProblem(ab_catalog(), (8, 16), waste=(8, 32))
    a = multi_start(prob, starts=1)
    b = solve_relaxed(prob)
    assert np.array_equal(a.x_star.counts, b.x_star.counts)


def test_multi_start_deterministic_and_min():
    prob = AllocationProblem(bundled_catalog(), (16, 32, 8, 200), waste=(16, 32, 8, 200))
    a = multi_start(prob, starts=4, seed=3)
    b = multi_start(prob, starts=4, seed=3)
    assert np.array_equal(a.x_star.counts, b.x_star.counts) and a.value == b.value
    assert a.value <= solve_relaxed(prob).value + 1e-12


def test_multi_start_finds_lower_basin():
    # two providers; mixing them pays the consolidation term twice, so the
    # corners are separate basins and the cheaper one is global
    schema = ResourceSchema(("cpu_cores",), ("cores",))
    cat = InstanceCatalog(schema, (
        InstanceType("a", "a1", (1.0,), 1.00),
        InstanceType("b", "b1", (1.0,), 0.95),
        InstanceType("b", "b2", (2.0,), 2.10),
    ))
    prm = PenaltyParams(alpha=2.0, beta1=3.0, beta2=0.1, beta3=10.0, gamma=0.0)
    prob = AllocationProblem(cat, (3.0,), waste=(1.0,), params=prm)
    sol = multi_start(prob, starts=8, seed=42)
    best = np.inf
    grid = np.arange(0, 4.0001, 0.02)
    for a, b in itertools.product(grid, grid):
        for c2 in (0.0,):
            x = np.array([a, b, c2])
            if constraint_residuals(prob, x).feasible(1e-12):
                best = min(best, objective(prob, x).total)
    assert sol.value <= best + 1e-3


def test_incremental_relaxation_respects_budget():
    prob = AllocationProblem(ab_catalog(), (8, 16), waste=(8, 32), current=Allocation([0, 2]), max_deviation=1.5)
    sol = solve_relaxed(prob)
    assert np.abs(sol.x_star.counts - [0, 2]).sum() <= 1.5 + 1e-6


def test_iterates_descend_within_centering():
    prob = AllocationProblem(ab_catalog(), (8, 16), waste=(8, 32))
    sol = solve_relaxed(prob)
    assert sol.trace
    by_t = {}
    for entry in sol.trace:
        by_t.setdefault(entry[0], []).append(entry[1])
    for values in by_t.values():
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
