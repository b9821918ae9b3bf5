import itertools

import numpy as np

from cloudalloc.catalog import InstanceCatalog, InstanceType, ResourceSchema, synth_catalog
from cloudalloc.model import AllocationProblem, PenaltyParams, constraint_residuals, objective

SCHEMA2 = ResourceSchema(("cpu_cores", "memory_gb"), ("cores", "GB"))


def ab_catalog():
    return InstanceCatalog(SCHEMA2, (
        InstanceType("azure", "A", (2.0, 4.0), 0.10),
        InstanceType("azure", "B", (4.0, 16.0), 0.25),
    ))


def fd_gradient(problem, x, h=1e-6):
    out = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (objective(problem, x + e).total - objective(problem, x - e).total) / (2 * h)
    return out


def enumerate_optimum(problem):
    """Brute-force minimum of f over integer points in the upper-bound box (None if infeasible)."""
    best, arg = np.inf, None
    ranges = [range(int(u) + 1) for u in problem.upper_bounds]
    tol = 1e-9 * max(1.0, float(np.abs(problem.demand).max(initial=0)))
    for pt in itertools.product(*ranges):
        x = np.array(pt, dtype=float)
        if not constraint_residuals(problem, x).feasible(tol):
            continue
        v = objective(problem, x).total
        if v < best:
            best, arg = v, x
    return (None, None) if arg is None else (best, arg)


def small_problem(seed):
    """Random problem with n <= 4 types, boxes of at most 6 and a mix of alpha values."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    p = int(rng.integers(1, min(n, 3) + 1))
    cat = synth_catalog(seed, n, p)
    K = np.array([i.capacities for i in cat.instances]).T
    x_ref = rng.integers(0, 4, n).astype(float)
    d = np.maximum(K @ x_ref * rng.uniform(0.6, 1.0, 4), 0.0)
    alpha = float(rng.choice([0.0, 0.05, 0.3, 1.0]))
    params = PenaltyParams(alpha=alpha, beta1=float(rng.choice([0.5, 1.0, 2.0])), gamma=float(rng.choice([0.0, 0.01])))
    waste = d * float(rng.choice([0.25, 0.5, 1.0]))
    ub = np.full(n, 6.0)
    return AllocationProblem(cat, d, waste=waste, params=params, upper_bounds=ub)
