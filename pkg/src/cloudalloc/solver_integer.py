"""Integer allocations: best-first branch-and-bound and greedy rounding.

Node bounds come from the continuous relaxation of a convex underestimator
of the objective on the node box: the concave consolidation term is
replaced by its chord over the range of provider usage ``(Ex)_j`` the node
allows. Besides branching on fractional counts, the search splits those
provider-usage ranges, which tightens the chords until they are exact.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .model import (
    Allocation,
    AllocationProblem,
    ObjectiveBreakdown,
    ProblemError,
    constraint_residuals,
    counts_of,
    objective,
)
from .solver_continuous import (
    BarrierSettings,
    InfeasibleProblem,
    Relaxation,
    Secant,
    consolidation_chord,
    solve_relaxation,
    solve_relaxed,
)

log = logging.getLogger(__name__)

NODE_EXPAND = 1e-7
FEAS_TOL = 1e-9
CHORD_SPLIT_FRACTION = 1e-3


class UncoverableResource(InfeasibleProblem):
    """Some demanded resource is provided by no instance type."""


class SearchExhausted(RuntimeError):
    """The budget ran out and the rounding fallback leaves the deviation budget."""


@dataclass(frozen=True)
class SearchBudget:
    max_nodes: Optional[int] = 200_000
    time_limit: Optional[float] = None
    abs_gap: float = 1e-7
    rel_gap: float = 1e-9


@dataclass
class IntegerSolution:
    x_hat: Allocation
    breakdown: ObjectiveBreakdown
    bound_gap: float
    nodes_explored: int
    method: str  # "branch_and_bound" | "rounding"
    status: str = "optimal"  # "optimal" | "budget_exhausted" | "heuristic"
    lower_bound: float = -math.inf

    def as_dict(self) -> dict:
        return {
            "x_hat": self.x_hat.counts.tolist(),
            "breakdown": self.breakdown.as_dict(),
            "bound_gap": None if not math.isfinite(self.bound_gap) else self.bound_gap,
            "nodes_explored": self.nodes_explored,
            "method": self.method,
            "status": self.status,
            "lower_bound": None if not math.isfinite(self.lower_bound) else self.lower_bound,
        }


@dataclass
class BnBNode:
    lower_bounds_x: np.ndarray
    upper_bounds_x: np.ndarray
    zlo: np.ndarray
    zhi: np.ndarray
    relaxation_value: float
    depth: int
    warm: Optional[np.ndarray] = None


# --- feasibility helpers -----------------------------------------------------

def integer_feasible(problem: AllocationProblem, x: np.ndarray, tol: float = FEAS_TOL) -> bool:
    if np.any(x < 0):
        return False
    return constraint_residuals(problem, x).feasible(tol * max(1.0, float(np.abs(problem.demand).max(initial=0))))


def apply_incremental(problem: AllocationProblem, current=None, max_deviation: float | None = None) -> AllocationProblem:
    """Attach the l1 trust region ``||x - x_current||_1 <= max_deviation``.

    Both solvers realize it with per-type auxiliary deviation variables (the
    usual split of ``x - x_current`` into positive and negative parts).
    """
    current = problem.current if current is None else current
    max_deviation = problem.max_deviation if max_deviation is None else max_deviation
    if current is None or max_deviation is None:
        raise ProblemError("incremental adoption needs a current allocation and max_deviation")
    if max_deviation < 0:
        raise ProblemError("max_deviation must be nonnegative")
    if not isinstance(current, Allocation):
        current = Allocation(current)
    return replace(problem, current=current, max_deviation=float(max_deviation))


def _tighten(problem: AllocationProblem, lo, hi, zlo, zhi, rounds: int = 6):
    """Implied-bound cuts from the demand band, provider ranges and deviation budget."""
    K, E = problem.K, problem.E
    need = problem.demand - problem.uncertainty
    cap = problem.demand + problem.waste
    pos = K > 0
    safeK = np.where(pos, K, 1.0)
    for _ in range(rounds):
        old = (lo.copy(), hi.copy(), zlo.copy(), zhi.copy())
        room = cap - K @ lo
        if np.any(room < -FEAS_TOL * np.maximum(1.0, cap)):
            return None
        inc = np.where(pos, np.floor(room[:, None] / safeK + 1e-9), np.inf).min(axis=0)
        hi = np.minimum(hi, lo + inc)
        surplus = K @ hi - need
        dec = np.where(pos, np.floor(np.maximum(surplus, -1e300)[:, None] / safeK + 1e-9), np.inf).min(axis=0)
        if np.any(surplus < -FEAS_TOL * np.maximum(1.0, np.abs(need))):
            return None
        lo = np.maximum(lo, hi - dec)
        zlo = np.maximum(zlo, E @ lo)
        zhi = np.minimum(zhi, E @ hi)
        if np.any(zlo > zhi):
            return None
        # per-type limits implied by provider ranges
        hi = np.minimum(hi, E.T @ zhi - (E.T @ (E @ lo) - lo))
        lo = np.maximum(lo, E.T @ zlo - (E.T @ (E @ hi) - hi))
        if problem.max_deviation is not None:
            xc = problem.current.counts
            dist = np.maximum(0.0, np.maximum(lo - xc, xc - hi))
            budget = problem.max_deviation - dist.sum()
            if budget < -FEAS_TOL:
                return None
            allow = budget + dist
            hi = np.minimum(hi, np.floor(xc + allow + 1e-9))
            lo = np.maximum(lo, np.ceil(xc - allow - 1e-9))
        if np.any(lo > hi):
            return None
        if all(np.array_equal(a, b) for a, b in zip(old, (lo, hi, zlo, zhi))):
            break
    return lo, hi, zlo, zhi


def check_coverable(problem: AllocationProblem) -> None:
    """Raise :class:`UncoverableResource` if a demanded resource has no usable supplier."""
    need = problem.demand - problem.uncertainty
    usable = np.asarray(problem.upper_bounds) > 0
    supplied = np.any(problem.K[:, usable] > 0, axis=1)
    bad = np.flatnonzero((need > 0) & ~supplied)
    if bad.size:
        name = problem.catalog.schema.names[int(bad[0])]
        raise UncoverableResource(f"uncoverable resource: no instance type provides {name}", float(need[bad[0]]), name)


# --- greedy rounding ---------------------------------------------------------

def _greedy_pick(K: np.ndarray, c: np.ndarray, deficit: np.ndarray, allowed: np.ndarray | None = None) -> int:
    short = deficit > 0
    score = K[short].T @ deficit[short]
    usable = score > 0
    if allowed is not None:
        usable &= allowed
    if not np.any(usable):
        return -1
    free = usable & (c <= 0)
    if np.any(free):
        return int(np.flatnonzero(free)[0])
    ratio = np.where(usable, score / np.where(c > 0, c, 1.0), -np.inf)
    return int(np.argmax(ratio))


def greedy_round(problem: AllocationProblem, x_relaxed) -> IntegerSolution:
    """Floor, then repeatedly add the type with the best deficit-coverage per dollar.

    Stops once ``Kx >= d``. Waste-cap violations are left in place (they show
    up in :func:`constraint_residuals`), not repaired.
    """
    xr = counts_of(x_relaxed, problem.n)
    if np.any(xr < 0):
        raise ProblemError("relaxed allocation must be nonnegative")
    K, c, d = problem.K, problem.c, problem.demand
    x = np.floor(xr + 1e-9)
    deficit = d - K @ x
    uncoverable = (deficit > 0) & ~np.any(K > 0, axis=1)
    if np.any(uncoverable):
        name = problem.catalog.schema.names[int(np.flatnonzero(uncoverable)[0])]
        raise UncoverableResource(f"uncoverable resource: no instance type provides {name}", float(deficit.max()), name)
    while np.any(deficit > 0):
        i = _greedy_pick(K, c, deficit)
        x[i] += 1
        deficit = d - K @ x
    return IntegerSolution(Allocation(x, integral=True), objective(problem, x), math.inf, 0, "rounding", "heuristic")


def _repair(problem: AllocationProblem, x0: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> Optional[np.ndarray]:
    """Greedy completion inside the node box toward Kx >= d - mu; None when stuck."""
    K, c = problem.K, problem.c
    need = problem.demand - problem.uncertainty
    x = np.clip(x0, lo, hi)
    deficit = need - K @ x
    while np.any(deficit > FEAS_TOL):
        i = _greedy_pick(K, c, deficit, allowed=x < hi)
        if i < 0:
            return None
        x[i] += 1
        deficit = need - K @ x
    return x


# --- branch and bound --------------------------------------------------------

def _consolidation(problem: AllocationProblem, z: np.ndarray) -> np.ndarray:
    prm = problem.params
    return -prm.alpha * np.expm1(-prm.beta1 * z)


class _Search:
    def __init__(self, problem: AllocationProblem, settings: BarrierSettings, budget: SearchBudget):
        self.problem = problem
        self.settings = settings
        self.budget = budget
        self.incumbent: Optional[np.ndarray] = None
        self.incumbent_value = math.inf
        self.nodes = 0
        self.counter = itertools.count()
        self.heap: list = []
        self.pruned_bound = math.inf  # smallest bound among nodes cut off by the gap tolerance
        self.root_relaxed: Optional[np.ndarray] = None
        self.history: list = []

    def tol(self) -> float:
        return max(self.budget.abs_gap, self.budget.rel_gap * abs(self.incumbent_value))

    def offer(self, x: np.ndarray) -> None:
        x = np.round(x)
        if not integer_feasible(self.problem, x):
            return
        val = objective(self.problem, x).total
        if val < self.incumbent_value - 1e-15:
            self.incumbent, self.incumbent_value = x, val
            self.history.append(val)

    def push(self, node: BnBNode) -> None:
        heapq.heappush(self.heap, (node.relaxation_value, next(self.counter), node))

    def run(self) -> None:
        p = self.problem
        lo = np.zeros(p.n)
        hi = np.asarray(p.upper_bounds, dtype=float).copy()
        zlo = np.zeros(p.p)
        zhi = p.E @ hi
        self.push(BnBNode(lo, hi, zlo, zhi, -math.inf, 0))
        start = time.perf_counter()
        while self.heap:
            if self.budget.max_nodes is not None and self.nodes >= self.budget.max_nodes:
                break
            if self.budget.time_limit is not None and time.perf_counter() - start > self.budget.time_limit:
                break
            bound, _, node = heapq.heappop(self.heap)
            if bound >= self.incumbent_value - self.tol():
                self.pruned_bound = min(self.pruned_bound, bound)
                continue
            self.nodes += 1
            self.process(node)

    def process(self, node: BnBNode) -> None:
        p = self.problem
        tight = _tighten(p, node.lower_bounds_x.copy(), node.upper_bounds_x.copy(), node.zlo.copy(), node.zhi.copy())
        if tight is None:
            return
        lo, hi, zlo, zhi = tight
        alpha_on = p.params.alpha > 0
        rel = Relaxation(p, lo, hi, secant=Secant(zlo, zhi) if alpha_on else None, zbounds=(zlo, zhi),
                         expand=NODE_EXPAND)
        z0 = None
        if node.warm is not None and rel.nf:
            cand = rel.reduce(np.clip(node.warm, lo, hi))
            if rel.has_dev:
                cand[rel.nf:] += 0.5
            if rel.strictly_feasible(cand):
                z0 = cand
        res = solve_relaxation(rel, self.settings, z0)
        if res.status == "infeasible":
            return
        bound = node.relaxation_value
        x = None
        if res.status == "optimal":
            bound = max(bound, res.lower_bound)
            x = res.x
            if node.depth == 0:
                self.root_relaxed = x
        if bound >= self.incumbent_value - self.tol():
            self.pruned_bound = min(self.pruned_bound, bound)
            return
        if x is not None:
            self.offer(x)
            for start in (np.round(x), np.floor(x + 1e-9)):
                fixed = _repair(p, start, lo, hi)
                if fixed is not None:
                    self.offer(fixed)
            if bound >= self.incumbent_value - self.tol():
                self.pruned_bound = min(self.pruned_bound, bound)
                return
        child = lambda lo_, hi_, zlo_, zhi_: BnBNode(lo_, hi_, zlo_, zhi_, bound, node.depth + 1, x)  # noqa: E731
        free = hi > lo
        if x is None:
            # no usable relaxation point: bisect the widest range
            j = int(np.argmax(np.where(free, hi - lo, -1)))
            mid = math.floor((lo[j] + hi[j]) / 2)
            self._split_var(j, mid, lo, hi, zlo, zhi, child)
            return
        frac = np.abs(x - np.round(x))
        frac = np.where(free, frac, 0.0)
        if alpha_on:
            z = p.E @ x
            slope, intercept = consolidation_chord(p.params.alpha, p.params.beta1, zlo, zhi)
            err = _consolidation(p, z) - (intercept + slope * z)
            j = int(np.argmax(err))
            integral = frac.max(initial=0.0) <= 1e-6
            # small chord errors are left until the counts are integral
            threshold = self.tol() if integral else max(self.tol(), CHORD_SPLIT_FRACTION * p.params.alpha)
            if err[j] > threshold and zhi[j] > zlo[j]:
                # "provider unused" vs "used" first: that split removes most of the chord error
                cut = 0 if zlo[j] == 0 else math.floor(z[j] + 1e-9)
                cut = min(max(cut, int(zlo[j])), int(zhi[j]) - 1)
                left_hi, right_lo = zhi.copy(), zlo.copy()
                left_hi[j], right_lo[j] = cut, cut + 1
                self.push(child(lo, hi, zlo, left_hi))
                self.push(child(lo, hi, right_lo, zhi))
                return
        if frac.max(initial=0.0) > 1e-6:
            # most fractional; argmax returns the lowest index on ties
            j = int(np.argmax(-np.abs(np.where(free & (frac > 1e-6), frac, 2.0) - 0.5)))
            self._split_var(j, math.floor(x[j]), lo, hi, zlo, zhi, child)
            return
        xr = np.round(x)
        if integer_feasible(p, xr):
            return  # the relaxation point is integral and was offered as incumbent
        if np.any(free):
            j = int(np.argmax(np.where(free, hi - lo, -1)))
            self._split_var(j, math.floor((lo[j] + hi[j]) / 2), lo, hi, zlo, zhi, child)

    def _split_var(self, j, cut, lo, hi, zlo, zhi, child):
        cut = min(max(cut, int(lo[j])), int(hi[j]) - 1)
        down_hi = hi.copy()
        down_hi[j] = cut
        up_lo = lo.copy()
        up_lo[j] = cut + 1
        self.push(child(lo, down_hi, zlo, zhi))
        self.push(child(up_lo, hi, zlo, zhi))


HEURISTIC_NODE_SHARE = 0.25
HEURISTIC_MAX_NODES = 200
HEURISTIC_MAX_PROVIDERS = 8


def _seed_incumbents(search: _Search, settings: BarrierSettings, budget: SearchBudget) -> None:
    """Incumbents from convex searches: consolidation dropped, all providers and one provider at a time.

    The feasible set is unchanged, so every point found is a valid
    incumbent for the full objective. Their nodes count against the budget.
    """
    p = search.problem
    cap = HEURISTIC_MAX_NODES
    if budget.max_nodes is not None:
        cap = min(cap, int(budget.max_nodes * HEURISTIC_NODE_SHARE))
    if cap < 1:
        return
    convex = p.with_params(replace(p.params, alpha=0.0))
    variants = [convex]
    if 1 < p.p <= HEURISTIC_MAX_PROVIDERS:
        for j in range(p.p):
            variants.append(replace(convex, upper_bounds=np.where(p.E[j] > 0, p.upper_bounds, 0.0)))
    for q in variants:
        sub = _Search(q, settings, SearchBudget(max_nodes=cap, time_limit=budget.time_limit))
        sub.run()
        search.nodes += sub.nodes
        if sub.incumbent is not None:
            search.offer(sub.incumbent)


def solve_integer(problem: AllocationProblem, settings: BarrierSettings | None = None,
                  budget: SearchBudget | None = None) -> IntegerSolution:
    """Best-first branch-and-bound over integer counts within ``upper_bounds``.

    Node selection is by lower bound with FIFO ties; branching is on the
    most fractional count (lowest index on ties) unless a provider-usage
    chord is loose. If the budget runs out before any incumbent is found,
    the root relaxation is greedily rounded instead; rounding ignores the
    deviation budget, so SearchExhausted is raised when it is exceeded.
    """
    settings = settings or BarrierSettings()
    budget = budget or SearchBudget()
    check_coverable(problem)
    search = _Search(problem, settings, budget)
    if problem.params.alpha > 0:
        _seed_incumbents(search, settings, budget)
    search.run()
    exhausted = not search.heap
    open_bound = min((b for b, _, _ in search.heap), default=math.inf)
    if search.incumbent is None:
        if exhausted:
            raise InfeasibleProblem("no integer allocation satisfies the constraints", math.inf, "integer feasibility")
        root = search.root_relaxed
        if root is None:
            root = solve_relaxed(problem, settings).x_star.counts
        sol = greedy_round(problem, root)
        if problem.max_deviation is not None:
            moved = float(np.abs(sol.x_hat.counts - problem.current.counts).sum())
            if moved > problem.max_deviation + FEAS_TOL:
                raise SearchExhausted(f"budget exhausted; rounded allocation moves {moved:g} > "
                                      f"max_deviation {problem.max_deviation:g}")
        sol.nodes_explored = search.nodes
        sol.lower_bound = open_bound
        return sol
    lower = min(open_bound, search.pruned_bound, search.incumbent_value)
    gap = 0.0 if exhausted else max(0.0, search.incumbent_value - lower)
    return IntegerSolution(
        Allocation(search.incumbent, integral=True),
        objective(problem, search.incumbent),
        gap,
        search.nodes,
        "branch_and_bound",
        "optimal" if exhausted else "budget_exhausted",
        lower,
    )
