import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cloudalloc.catalog import InstanceCatalog, InstanceType, ResourceSchema, synth_catalog
from cloudalloc.model import (
    Allocation,
    AllocationProblem,
    PenaltyParams,
    ProblemError,
    constraint_residuals,
    gradient,
    load_problem,
    objective,
    problem_from_dict,
    problem_to_dict,
    shortage_indicator,
)

from .helpers import ab_catalog, fd_gradient

NO_PENALTY = PenaltyParams(alpha=0.0, beta3=1.0, gamma=0.0)


def test_origin_value():
    prob = AllocationProblem(ab_catalog(), (8, 16), params=NO_PENALTY)
    b = objective(prob, [0, 0])
    assert b.total == 320.0 and b.consolidation_penalty == 0.0 and b.volume_discount == 0.0


def test_ab_example_breakdown():
    prob = AllocationProblem(ab_catalog(), (8, 16), params=NO_PENALTY)
    b = objective(prob, [4, 0])
    assert b.base_cost == pytest.approx(0.40) and b.shortage_penalty == 0.0 and b.total == pytest.approx(0.40)


def test_shortage_indicator_ties_are_zero():
    prob = AllocationProblem(ab_catalog(), (8, 16))
    assert shortage_indicator(prob, [4, 0]).tolist() == [0, 0]
    assert shortage_indicator(prob, [0, 0]).tolist() == [1, 1]
    # Kx = (10, 12) with d = (8, 16)
    cat = InstanceCatalog(ab_catalog().schema, (InstanceType("p", "x", (5.0, 6.0), 1.0),))
    assert shortage_indicator(AllocationProblem(cat, (8, 16)), [2]).tolist() == [0, 1]


def test_residuals():
    prob = AllocationProblem(ab_catalog(), (8, 16))
    res = constraint_residuals(prob, [4, 0])
    assert res.lower.tolist() == [0, 0] and res.feasible()
    zero = AllocationProblem(ab_catalog(), (0, 0))
    assert constraint_residuals(zero, [0, 0]).feasible()
    inc = AllocationProblem(ab_catalog(), (8, 16), current=Allocation([4, 0]), max_deviation=1)
    assert constraint_residuals(inc, [3, 1]).deviation == -1
    assert constraint_residuals(inc, [4, 1]).deviation == 0


def test_gradient_closed_forms():
    cat = synth_catalog(3, 6, 2)
    prm = PenaltyParams(alpha=0.3, beta1=0.7, beta2=0.2, beta3=2.0, gamma=0.05)
    prob = AllocationProblem(cat, (8, 16, 4, 100), params=prm)
    expected = prob.c + prm.alpha * prm.beta1 * prob.E.T @ np.ones(2) - prm.gamma * prm.beta2 * prob.E.T @ np.ones(2) \
        - 2 * prm.beta3 * prob.K.T @ prob.demand
    assert np.allclose(gradient(prob, np.zeros(6)), expected)
    lin = prob.with_params(PenaltyParams(alpha=0, beta3=0, gamma=0))
    assert np.allclose(gradient(lin, np.arange(6.0)), prob.c)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    cat = synth_catalog(seed % 1000, 6, 2)
    prob = AllocationProblem(cat, rng.uniform(1, 50, 4), params=PenaltyParams(alpha=0.2, gamma=0.05, beta3=3.0))
    x = rng.uniform(0.1, 3.0, 6)
    if np.min(np.abs(prob.K @ x - prob.demand)) < 1e-3:
        return
    g = gradient(prob, x)
    fd = fd_gradient(prob, x)
    assert np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(fd))) < 1e-5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_breakdown_properties(seed):
    rng = np.random.default_rng(seed)
    cat = synth_catalog(seed % 997, 5, 3)
    prm = PenaltyParams(alpha=float(rng.uniform(0, 1)), gamma=float(rng.uniform(0, 1)))
    prob = AllocationProblem(cat, rng.uniform(0, 40, 4), params=prm)
    x = rng.integers(0, 5, 5).astype(float)
    b = objective(prob, x)
    parts = b.base_cost + b.consolidation_penalty + b.volume_discount + b.shortage_penalty
    assert abs(b.total - parts) <= 1e-12 * max(1.0, abs(b.total))
    assert 0 <= b.consolidation_penalty <= prm.alpha * cat.p + 1e-15
    assert b.volume_discount <= 0 and b.shortage_penalty >= 0
    assert (b.shortage_penalty == 0) == bool(np.all(prob.K @ x >= prob.demand))
    # more instances never lower the consolidation term
    y = x.copy()
    y[int(rng.integers(0, 5))] += 1
    assert objective(prob, y).consolidation_penalty >= b.consolidation_penalty


def test_instance_permutation_equivariance():
    cat = synth_catalog(5, 6, 2)
    perm = [3, 0, 5, 1, 4, 2]
    pcat = InstanceCatalog(cat.schema, tuple(cat.instances[i] for i in perm), cat.providers)
    d = (10, 30, 5, 120)
    x = np.array([1, 0, 2, 3, 0, 1.0])
    a = objective(AllocationProblem(cat, d), x)
    b = objective(AllocationProblem(pcat, d), x[perm])
    assert a.total == pytest.approx(b.total, rel=1e-13)
    rev = InstanceCatalog(cat.schema, cat.instances, tuple(reversed(cat.providers)))
    assert objective(AllocationProblem(rev, d), x).total == pytest.approx(a.total, rel=1e-13)


def test_validation():
    cat = ab_catalog()
    with pytest.raises(ProblemError):
        AllocationProblem(cat, (1, 2, 3))
    with pytest.raises(ProblemError):
        AllocationProblem(cat, (-1, 2))
    with pytest.raises(ProblemError):
        AllocationProblem(cat, (1, 2), max_deviation=1)
    with pytest.raises(ProblemError):
        PenaltyParams(beta1=0)
    with pytest.raises(ProblemError):
        Allocation([1.5], integral=True)
    with pytest.raises(ProblemError):
        objective(AllocationProblem(cat, (1, 2)), [1, 2, 3])


def test_defaults():
    prob = AllocationProblem(ab_catalog(), (8, 16))
    assert prob.uncertainty.tolist() == [0, 0]
    assert prob.waste.tolist() == [2, 4]
    # ceil(max(10/2, 20/4)) = 5 and ceil(max(10/4, 20/16)) = 3
    assert prob.upper_bounds.tolist() == [5, 3]


def test_problem_json_roundtrip(tmp_path):
    cat = ab_catalog()
    prob = AllocationProblem(cat, (8, 16), waste=(8, 32), params=PenaltyParams(alpha=0.1),
                             current=Allocation([4, 0]), max_deviation=2)
    data = problem_to_dict(prob, {"schema": [{"name": "cpu_cores", "unit": "cores"}, {"name": "memory_gb", "unit": "GB"}],
                                  "instances": [{"provider_id": i.provider_id, "sku": i.sku,
                                                 "capacities": list(i.capacities), "hourly_cost": i.hourly_cost}
                                                for i in cat.instances]})
    path = tmp_path / "p.json"
    path.write_text(json.dumps(data))
    back = load_problem(str(path))
    assert back.demand.tolist() == [8, 16] and back.max_deviation == 2
    assert back.params == prob.params and back.current.counts.tolist() == [4, 0]
    with pytest.raises(ProblemError):
        problem_from_dict({"demand": [1, 2]})
