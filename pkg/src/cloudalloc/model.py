"""The allocation problem: objective with per-term breakdown, gradient, and constraint residuals.

The objective over instance counts ``x`` is::

    f(x) = c.x + alpha * sum_j (1 - exp(-beta1 z_j))
               - gamma * sum_j log(1 + beta2 z_j)
               + beta3 * sum_r max(0, d_r - (Kx)_r)^2,      z = E x

subject to ``d - mu <= Kx <= d + g`` and ``x >= 0`` (integral in the
integer problem). The consolidation term is concave in ``z``, so ``f`` is
only convex when ``alpha == 0``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .catalog import InstanceCatalog, catalog_from_dict, composition_matrix, load_catalog, selector_matrix

UPPER_BOUND_CAP = 512
DEFAULT_WASTE_FRACTION = 0.25


class ProblemError(ValueError):
    """Invalid problem data (bad dimensions, negative vectors, ...)."""


@dataclass(frozen=True)
class PenaltyParams:
    alpha: float = 0.05
    beta1: float = 1.0
    beta2: float = 0.1
    beta3: float = 10.0
    gamma: float = 0.01

    def __post_init__(self):
        if not (self.beta1 > 0 and self.beta2 > 0):
            raise ProblemError(f"beta1 and beta2 must be positive, got {self.beta1}, {self.beta2}")
        if min(self.alpha, self.beta3, self.gamma) < 0:
            raise ProblemError("alpha, beta3 and gamma must be nonnegative")

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "beta1": self.beta1, "beta2": self.beta2, "beta3": self.beta3,
                "gamma": self.gamma}


@dataclass(frozen=True)
class Allocation:
    counts: np.ndarray
    integral: bool = False

    def __post_init__(self):
        counts = np.array(self.counts, dtype=float).reshape(-1)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise ProblemError("allocation counts must be finite and nonnegative")
        if self.integral and np.any(counts != np.round(counts)):
            raise ProblemError("integral allocation has fractional counts")

    @classmethod
    def zeros(cls, n: int) -> "Allocation":
        return cls(np.zeros(n), integral=True)

    def __len__(self):
        return len(self.counts)


def _vec(values, length: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.shape != (length,):
        raise ProblemError(f"{name} must have length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ProblemError(f"{name} must be finite and nonnegative")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AllocationProblem:
    """Demand, tolerances, penalties and optional incremental-adoption data.

    ``uncertainty`` defaults to zero and ``waste`` to a quarter of demand.
    ``upper_bounds`` defaults to a per-type box that contains every point
    with ``Kx <= d + g``.
    """

    catalog: InstanceCatalog
    demand: np.ndarray
    uncertainty: Optional[np.ndarray] = None
    waste: Optional[np.ndarray] = None
    params: PenaltyParams = field(default_factory=PenaltyParams)
    current: Optional[Allocation] = None
    max_deviation: Optional[float] = None
    upper_bounds: Optional[np.ndarray] = None

    K: np.ndarray = field(init=False, repr=False)
    E: np.ndarray = field(init=False, repr=False)
    c: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m, n = self.catalog.m, self.catalog.n
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        demand = _vec(self.demand, m, "demand")
        set_("demand", demand)
        set_("uncertainty", np.zeros(m) if self.uncertainty is None else _vec(self.uncertainty, m, "uncertainty"))
        set_("waste", DEFAULT_WASTE_FRACTION * demand if self.waste is None else _vec(self.waste, m, "waste"))
        if self.current is not None:
            cur = self.current if isinstance(self.current, Allocation) else Allocation(self.current)
            if len(cur) != n:
                raise ProblemError(f"current allocation must have length {n}")
            set_("current", cur)
        if self.max_deviation is not None:
            if self.max_deviation < 0:
                raise ProblemError("max_deviation must be nonnegative")
            if self.current is None:
                raise ProblemError("max_deviation requires a current allocation")
        K = composition_matrix(self.catalog)
        set_("K", K)
        set_("E", selector_matrix(self.catalog))
        set_("c", self.catalog.costs)
        if self.upper_bounds is None:
            set_("upper_bounds", default_upper_bounds(K, demand + self.waste))
        else:
            ub = _vec(self.upper_bounds, n, "upper_bounds")
            if np.any(ub != np.round(ub)):
                raise ProblemError("upper_bounds must be whole numbers")
            set_("upper_bounds", ub)
        for arr in (K, self.E, self.c):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.catalog.n

    @property
    def m(self) -> int:
        return self.catalog.m

    @property
    def p(self) -> int:
        return self.catalog.p

    def with_params(self, params: PenaltyParams) -> "AllocationProblem":
        return replace(self, params=params)


def default_upper_bounds(K: np.ndarray, cap: np.ndarray) -> np.ndarray:
    """ceil(max_r cap_r / K[r, i]) over resources the type provides, capped at 512."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(K > 0, cap[:, None] / np.where(K > 0, K, 1.0), -np.inf)
    ub = np.ceil(ratio.max(axis=0))
    ub = np.clip(ub, 0, UPPER_BOUND_CAP)
    out = ub.astype(float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ObjectiveBreakdown:
    base_cost: float
    consolidation_penalty: float
    volume_discount: float
    shortage_penalty: float
    total: float

    def as_dict(self) -> dict:
        return {
            "base_cost": self.base_cost,
            "consolidation_penalty": self.consolidation_penalty,
            "volume_discount": self.volume_discount,
            "shortage_penalty": self.shortage_penalty,
            "total": self.total,
        }


def counts_of(x, n: int | None = None) -> np.ndarray:
    arr = x.counts if isinstance(x, Allocation) else np.asarray(x, dtype=float).reshape(-1)
    if n is not None and arr.shape != (n,):
        raise ProblemError(f"allocation must have length {n}, got {arr.shape[0]}")
    return arr


def objective(problem: AllocationProblem, x) -> ObjectiveBreakdown:
    xv = counts_of(x, problem.n)
    prm = problem.params
    z = problem.E @ xv
    base = float(problem.c @ xv)
    consolidation = float(prm.alpha * np.sum(-np.expm1(-prm.beta1 * z)))
    discount = float(-prm.gamma * np.sum(np.log1p(prm.beta2 * z)))
    short = np.maximum(0.0, problem.demand - problem.K @ xv)
    shortage = float(prm.beta3 * short @ short)
    return ObjectiveBreakdown(base, consolidation, discount, shortage, base + consolidation + discount + shortage)


def shortage_indicator(problem: AllocationProblem, x) -> np.ndarray:
    """s_r = 1 where demand strictly exceeds provision (ties give 0)."""
    xv = counts_of(x, problem.n)
    return (problem.demand > problem.K @ xv).astype(float)


def gradient(problem: AllocationProblem, x) -> np.ndarray:
    xv = counts_of(x, problem.n)
    prm = problem.params
    z = problem.E @ xv
    Kx = problem.K @ xv
    s = (problem.demand > Kx).astype(float)
    return (problem.c
            + prm.alpha * prm.beta1 * problem.E.T @ np.exp(-prm.beta1 * z)
            - prm.gamma * prm.beta2 * problem.E.T @ (1.0 / (1.0 + prm.beta2 * z))
            - 2.0 * prm.beta3 * problem.K.T @ (s * (problem.demand - Kx)))


@dataclass(frozen=True)
class ConstraintResiduals:
    lower: np.ndarray
    upper: np.ndarray
    deviation: Optional[float]

    def feasible(self, tol: float = 1e-9) -> bool:
        ok = bool(np.all(self.lower >= -tol) and np.all(self.upper >= -tol))
        return ok and (self.deviation is None or self.deviation >= -tol)


def constraint_residuals(problem: AllocationProblem, x) -> ConstraintResiduals:
    """Residuals that are >= 0 exactly when the corresponding constraint holds."""
    xv = counts_of(x, problem.n)
    Kx = problem.K @ xv
    lower = Kx - (problem.demand - problem.uncertainty)
    upper = (problem.demand + problem.waste) - Kx
    deviation = None
    if problem.max_deviation is not None:
        deviation = float(problem.max_deviation - np.abs(xv - problem.current.counts).sum())
    return ConstraintResiduals(lower, upper, deviation)


def waste_penalty(problem: AllocationProblem, x) -> float:
    """Quadratic hinge on Kx > d + g, used when the waste cap is softened."""
    xv = counts_of(x, problem.n)
    over = np.maximum(0.0, problem.K @ xv - problem.demand - problem.waste)
    return float(problem.params.beta3 * over @ over)


# --- problem fixtures -------------------------------------------------------

def problem_from_dict(data: dict, catalog: InstanceCatalog | None = None, base_dir: str = ".") -> AllocationProblem:
    if catalog is None:
        ref = data.get("catalog")
        if isinstance(ref, dict):
            catalog = catalog_from_dict(ref)
        elif isinstance(ref, str):
            path = ref if os.path.isabs(ref) else os.path.join(base_dir, ref)
            catalog = load_catalog(path)
        else:
            raise ProblemError("problem needs a catalog (inline object or path)")
    try:
        params = PenaltyParams(**data.get("params", {}))
    except TypeError as exc:
        raise ProblemError(f"bad params: {exc}") from None
    if "demand" not in data:
        raise ProblemError("problem needs a demand vector")
    current = data.get("current_counts")
    return AllocationProblem(
        catalog,
        data["demand"],
        uncertainty=data.get("uncertainty"),
        waste=data.get("waste"),
        params=params,
        current=None if current is None else Allocation(current),
        max_deviation=data.get("max_deviation"),
        upper_bounds=data.get("upper_bounds"),
    )


def problem_to_dict(problem: AllocationProblem, catalog_ref=None) -> dict:
    out = {
        "demand": problem.demand.tolist(),
        "uncertainty": problem.uncertainty.tolist(),
        "waste": problem.waste.tolist(),
        "params": problem.params.as_dict(),
    }
    if problem.current is not None:
        out["current_counts"] = problem.current.counts.tolist()
    if problem.max_deviation is not None:
        out["max_deviation"] = problem.max_deviation
    if catalog_ref is not None:
        out["catalog"] = catalog_ref
    return out


def load_problem(path: str, catalog: InstanceCatalog | None = None) -> AllocationProblem:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return problem_from_dict(data, catalog, base_dir=os.path.dirname(os.path.abspath(path)))


def is_whole(x: np.ndarray, tol: float = 1e-9) -> bool:
    return bool(np.all(np.abs(x - np.round(x)) <= tol))


def ceil_div(a: float, b: float) -> int:
    return int(math.ceil(a / b - 1e-12))
