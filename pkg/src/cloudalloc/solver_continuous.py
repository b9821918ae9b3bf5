"""Log-barrier interior-point solver for the continuous relaxation, plus multi-start.

The relaxation is assembled as ``min F(z)  s.t.  A z <= b`` over the free
instance counts (and, with an incremental-adoption bound, auxiliary
per-type deviation variables). Newton steps use the exact Hessian of the
smooth terms plus the generalized Hessian of the shortage hinge; when that
matrix is not positive definite (the consolidation term is concave) the
concave curvature is dropped for the step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kkt import Multipliers
from .model import (
    Allocation,
    AllocationProblem,
    ObjectiveBreakdown,
    ProblemError,
    objective,
    waste_penalty,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BarrierSettings:
    t_initial: float = 1.0
    t_growth: float = 10.0
    inner_tolerance: float = 1e-8
    outer_tolerance: float = 1e-6
    max_inner_iters: int = 200
    max_outer_iters: int = 12
    armijo_c: float = 0.01
    backtrack_factor: float = 0.5

    def __post_init__(self):
        if not (self.t_initial > 0 and self.t_growth > 1):
            raise ValueError("t_initial must be > 0 and t_growth > 1")
        if not (self.inner_tolerance > 0 and self.outer_tolerance > 0):
            raise ValueError("tolerances must be positive")
        if self.max_inner_iters < 1 or self.max_outer_iters < 1:
            raise ValueError("iteration budgets must be >= 1")
        if not (0 < self.armijo_c < 1 and 0 < self.backtrack_factor < 1):
            raise ValueError("armijo_c and backtrack_factor must lie in (0, 1)")


class InfeasibleProblem(Exception):
    """No point satisfies the constraints.

    ``violation`` is the minimized worst (row-normalized) violation and
    ``constraint`` names the most violated constraint at that point.
    """

    def __init__(self, message: str, violation: float, constraint: str):
        super().__init__(message)
        self.violation = violation
        self.constraint = constraint


@dataclass
class ContinuousSolution:
    x_star: Allocation
    breakdown: ObjectiveBreakdown
    multipliers: Multipliers
    iterations: dict
    converged: bool
    mode: str = "barrier"
    t_final: float = 0.0
    gap_bound: float = float("inf")
    waste_penalty: float = 0.0
    trace: list = field(default_factory=list)  # (t, barrier objective) per accepted Newton step

    @property
    def value(self) -> float:
        """Objective actually minimized (the breakdown total plus any softened waste penalty)."""
        return self.breakdown.total + self.waste_penalty


@dataclass(frozen=True)
class Secant:
    """Chord replacement for the consolidation term on provider-usage ranges."""

    zlo: np.ndarray
    zhi: np.ndarray


def consolidation_chord(alpha: float, beta1: float, zlo: np.ndarray, zhi: np.ndarray):
    """Slope and intercept of the chord of alpha*(1 - exp(-beta1 z)) on [zlo, zhi]."""
    phi_lo = -alpha * np.expm1(-beta1 * zlo)
    phi_hi = -alpha * np.expm1(-beta1 * zhi)
    width = zhi - zlo
    slope = np.where(width > 0, (phi_hi - phi_lo) / np.where(width > 0, width, 1.0), 0.0)
    return slope, phi_lo - slope * zlo


# --- assembled relaxation ----------------------------------------------------

class Relaxation:
    """One continuous subproblem over a box, in reduced (free-variable) coordinates.

    Fixed variables (``lo == hi``) are substituted out. ``expand`` loosens the
    demand/waste and provider-usage rows by a small absolute amount; B&B uses it so that nodes
    whose feasible set is thin still have an interior (a superset keeps the
    bound valid).
    """

    def __init__(self, problem: AllocationProblem, lo=None, hi=None, secant: Secant | None = None,
                 soft_waste: bool = False, zbounds=None, expand: float = 0.0, use_deviation: bool = True):
        n, m = problem.n, problem.m
        self.problem = problem
        self.soft_waste = soft_waste
        self.lo = np.zeros(n) if lo is None else np.asarray(lo, dtype=float)
        self.hi = None if hi is None else np.asarray(hi, dtype=float)
        if self.hi is not None and np.any(self.lo > self.hi):
            raise ValueError("empty box")
        fixed = np.zeros(n, dtype=bool) if self.hi is None else (self.hi - self.lo) <= 0
        self.free = np.flatnonzero(~fixed)
        self.base = np.where(fixed, self.lo, 0.0)
        K, E, c = problem.K, problem.E, problem.c
        F = self.free
        self.KF, self.EF, self.cF = K[:, F], E[:, F], c[F]
        self.Kbase, self.zbase, self.cbase = K @ self.base, E @ self.base, float(c @ self.base)
        prm = problem.params
        if secant is not None:
            self.slope, self.intercept = consolidation_chord(prm.alpha, prm.beta1, secant.zlo, secant.zhi)
        else:
            self.slope = None
        self.nf = len(F)

        dev = use_deviation and problem.max_deviation is not None
        self.has_dev = dev and self.nf > 0
        nz = self.nf * (2 if self.has_dev else 1)
        self.nz = nz
        rows, rhs, kinds, index = [], [], [], []

        def add(coef, b, kind, idx):
            rows.append(coef)
            rhs.append(b)
            kinds.append(kind)
            index.append(idx)

        self.const_violation = []  # (kind, index, amount) for rows without free coefficients
        pad = np.zeros(nz - self.nf)
        need = problem.demand - problem.uncertainty - self.Kbase
        cap = problem.demand + problem.waste - self.Kbase
        tol_ = 1e-12
        for r in range(m):
            coef = self.KF[r]
            if need[r] > 0:
                if np.any(coef > 0):
                    add(np.concatenate([-coef, pad]), -need[r] + expand * max(1.0, problem.demand[r]), "lower", r)
                else:
                    self.const_violation.append(("lower", r, need[r]))
            if not soft_waste:
                if np.any(coef > 0):
                    add(np.concatenate([coef, pad]), cap[r] + expand * max(1.0, problem.demand[r]), "upper", r)
                elif cap[r] < -tol_:
                    self.const_violation.append(("upper", r, -cap[r]))
        for k, i in enumerate(F):
            e = np.zeros(nz)
            e[k] = -1.0
            add(e, -self.lo[i], "nonneg", i)
        if self.hi is not None:
            for k, i in enumerate(F):
                e = np.zeros(nz)
                e[k] = 1.0
                add(e, self.hi[i], "box", i)
        if zbounds is not None:
            zlo, zhi = zbounds
            for j in range(problem.p):
                coef = self.EF[j]
                if not np.any(coef > 0):
                    if not (zlo[j] - 1e-9 <= self.zbase[j] <= zhi[j] + 1e-9):
                        self.const_violation.append(("provider", j, 1.0))
                    continue
                lo_sum = self.zbase[j] + coef @ self.lo[F]
                hi_sum = self.zbase[j] + (coef @ self.hi[F] if self.hi is not None else np.inf)
                slack = expand * max(1.0, zhi[j])
                if zlo[j] > lo_sum:
                    add(np.concatenate([-coef, pad]), -(zlo[j] - self.zbase[j]) + slack, "zlo", j)
                if zhi[j] < hi_sum:
                    add(np.concatenate([coef, pad]), zhi[j] - self.zbase[j] + slack, "zhi", j)
        if dev:
            xc = problem.current.counts
            fixed_dev = float(np.abs(self.base - xc)[~np.isin(np.arange(n), F)].sum())
            budget = problem.max_deviation - fixed_dev
            if self.has_dev:
                nf = self.nf
                for k, i in enumerate(F):
                    e = np.zeros(nz)
                    e[k], e[nf + k] = 1.0, -1.0
                    add(e, xc[i], "dev+", i)
                    e = np.zeros(nz)
                    e[k], e[nf + k] = -1.0, -1.0
                    add(e, -xc[i], "dev-", i)
                e = np.zeros(nz)
                e[nf:] = 1.0
                add(e, budget, "dev", -1)
            elif budget < -1e-9:
                self.const_violation.append(("dev", -1, -budget))
        self.A = np.array(rows).reshape(len(rows), nz)
        self.b = np.array(rhs, dtype=float)
        self.kinds = np.array(kinds)
        self.index = np.array(index)

    # -- mapping -----------------------------------------------------------
    def full_x(self, z: np.ndarray) -> np.ndarray:
        x = self.base.copy()
        x[self.free] = z[: self.nf]
        return x

    def reduce(self, x: np.ndarray) -> np.ndarray:
        y = np.asarray(x, dtype=float)[self.free]
        if not self.has_dev:
            return y.copy()
        w = np.abs(y - self.problem.current.counts[self.free])
        return np.concatenate([y, w])

    # -- smooth objective --------------------------------------------------
    def _parts(self, z):
        y = z[: self.nf]
        Kx = self.Kbase + self.KF @ y
        zz = self.zbase + self.EF @ y
        return y, Kx, zz

    def value(self, z: np.ndarray) -> float:
        prm = self.problem.params
        y, Kx, zz = self._parts(z)
        val = self.cbase + self.cF @ y
        if self.slope is None:
            val += prm.alpha * np.sum(-np.expm1(-prm.beta1 * zz))
        else:
            val += np.sum(self.intercept + self.slope * zz)
        val -= prm.gamma * np.sum(np.log1p(prm.beta2 * zz))
        short = np.maximum(0.0, self.problem.demand - Kx)
        val += prm.beta3 * short @ short
        if self.soft_waste:
            over = np.maximum(0.0, Kx - self.problem.demand - self.problem.waste)
            val += prm.beta3 * over @ over
        return float(val)

    def derivatives(self, z: np.ndarray):
        """Gradient, full Hessian, and Hessian with concave curvature removed."""
        prm = self.problem.params
        y, Kx, zz = self._parts(z)
        dz = -prm.gamma * prm.beta2 / (1.0 + prm.beta2 * zz)
        hz_convex = prm.gamma * prm.beta2**2 / (1.0 + prm.beta2 * zz) ** 2
        hz_concave = np.zeros_like(zz)
        if self.slope is None:
            ex = np.exp(-prm.beta1 * zz)
            dz = dz + prm.alpha * prm.beta1 * ex
            hz_concave = -prm.alpha * prm.beta1**2 * ex
        else:
            dz = dz + self.slope
        short = np.maximum(0.0, self.problem.demand - Kx)
        active = (short > 0).astype(float)
        g = self.cF + self.EF.T @ dz - 2.0 * prm.beta3 * self.KF.T @ short
        if self.soft_waste:
            over = np.maximum(0.0, Kx - self.problem.demand - self.problem.waste)
            active = active + (over > 0)
            g = g + 2.0 * prm.beta3 * self.KF.T @ over
        H_convex = (self.EF.T * hz_convex) @ self.EF + 2.0 * prm.beta3 * (self.KF.T * active) @ self.KF
        H_full = H_convex + (self.EF.T * hz_concave) @ self.EF if np.any(hz_concave) else H_convex
        if self.nz > self.nf:
            pad = self.nz - self.nf
            g = np.concatenate([g, np.zeros(pad)])
            H_convex = np.pad(H_convex, ((0, pad), (0, pad)))
            H_full = np.pad(H_full, ((0, pad), (0, pad))) if H_full is not H_convex else H_convex
        return g, H_full, H_convex

    def strictly_feasible(self, z: np.ndarray) -> bool:
        return bool(np.all(self.b - self.A @ z > 0))

    def slack(self, z: np.ndarray) -> np.ndarray:
        return self.b - self.A @ z

    def most_violated(self, z: np.ndarray) -> str:
        if self.const_violation:
            kind, idx, _ = max(self.const_violation, key=lambda t: t[2])
            return self.describe(kind, idx)
        norms = np.linalg.norm(self.A, axis=1)
        k = int(np.argmax(-(self.b - self.A @ z) / np.where(norms > 0, norms, 1.0)))
        return self.describe(self.kinds[k], self.index[k])

    def describe(self, kind, idx) -> str:
        names = self.problem.catalog.schema.names
        if kind == "lower":
            return f"demand coverage on {names[idx]} (uncoverable resource)" \
                if not np.any(self.KF[idx] > 0) else f"demand coverage on {names[idx]}"
        if kind == "upper":
            return f"waste cap on {names[idx]}"
        if kind in ("dev", "dev+", "dev-"):
            return "incremental-adoption deviation bound"
        if kind in ("zlo", "zhi", "provider"):
            return f"provider usage range for {self.problem.catalog.providers[idx]}"
        inst = self.problem.catalog.instances[idx]
        return f"bounds on {inst.provider_id}/{inst.sku}"


# --- barrier core ------------------------------------------------------------

@dataclass
class _PathResult:
    z: np.ndarray
    t: float
    newton: int
    outer: int
    centered: bool
    trace: list


def _newton_center(fval, fderiv, A, b, z, t, settings: BarrierSettings, trace):
    """Minimize t*F(z) - sum(log(b - Az)) from a strictly feasible z."""
    s = b - A @ z
    psi = t * fval(z) - np.log(s).sum()
    for it in range(settings.max_inner_iters):
        g_f, H_full, H_convex = fderiv(z)
        inv = 1.0 / s
        grad = t * g_f + A.T @ inv
        Hb = (A.T * inv**2) @ A
        step = None
        for H_obj in (H_full, H_convex) if H_full is not H_convex else (H_full,):
            H = t * H_obj + Hb
            try:
                L = np.linalg.cholesky(H)
            except np.linalg.LinAlgError:
                continue
            step = -np.linalg.solve(L.T, np.linalg.solve(L, grad))
            break
        if step is None:
            H = t * H_convex + Hb + 1e-8 * np.trace(Hb) / len(z) * np.eye(len(z))
            step = -np.linalg.solve(H, grad)
        decrement = float(-grad @ step)
        # below ~1e-13 |psi| the decrease is not resolvable in double precision
        if decrement / 2.0 <= max(settings.inner_tolerance, 1e-13 * abs(psi)):
            return z, it, True
        As = A @ step
        pos = As > 0
        a = 1.0
        if np.any(pos):
            a = min(1.0, 0.99 * float(np.min(s[pos] / As[pos])))
        slope = float(grad @ step)
        while True:
            z_new = z + a * step
            s_new = b - A @ z_new
            if (s_new > 0).all():
                psi_new = t * fval(z_new) - np.log(s_new).sum()
                if psi_new <= psi + settings.armijo_c * a * slope:
                    break
            a *= settings.backtrack_factor
            if a < 1e-10:
                # no progress representable in floating point: treat as centered
                return z, it, True
        z, s, psi = z_new, s_new, psi_new
        trace.append((t, psi))
    return z, settings.max_inner_iters, False


def barrier_path(fval, fderiv, A, b, z0, settings: BarrierSettings, gap_target: float | None = None,
                 stop=None) -> _PathResult:
    """Follow the central path until m_ineq / t <= gap_target (default outer_tolerance)."""
    target = settings.outer_tolerance if gap_target is None else gap_target
    m_ineq = len(b)
    z, t = np.array(z0, dtype=float), settings.t_initial
    newton, outer, centered, trace = 0, 0, True, []
    if m_ineq == 0:
        return _PathResult(z, np.inf, 0, 0, True, trace)
    for outer in range(1, settings.max_outer_iters + 1):
        z, its, centered = _newton_center(fval, fderiv, A, b, z, t, settings, trace)
        newton += its
        if stop is not None and stop(z, t):
            break
        if m_ineq / t <= target:
            break
        t *= settings.t_growth
    return _PathResult(z, t, newton, outer, centered and m_ineq / t <= target, trace)


@dataclass
class PhaseOneResult:
    z: Optional[np.ndarray]
    violation: float  # minimized worst row-normalized violation (negative = strict margin)
    lower_bound: float
    newton: int
    status: str  # "feasible" | "empty_interior" | "infeasible"


PHASE_ONE_SETTINGS = BarrierSettings(t_initial=1.0, t_growth=20.0, inner_tolerance=1e-10,
                                     outer_tolerance=1e-11, max_inner_iters=100, max_outer_iters=14)


def _phase_one_start(rel: Relaxation) -> np.ndarray:
    problem = rel.problem
    y = rel.lo[rel.free].copy()
    need = np.maximum(problem.demand - problem.uncertainty - rel.Kbase, 0)
    cap = problem.demand + problem.waste - rel.Kbase
    target = np.where(cap > need, 0.5 * (need + cap), need)
    if rel.nf:
        # uniform allocation scaled to hit the midpoint of the demand band on its tightest row
        supply = rel.KF.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(supply > 0, target / np.where(supply > 0, supply, 1.0), 0.0)
        y = np.maximum(y, ratios.max(initial=0.0))
        if rel.hi is not None:
            hi = rel.hi[rel.free]
            y = np.minimum(y, 0.5 * (rel.lo[rel.free] + hi))
            y = np.maximum(y, rel.lo[rel.free] + 0.25 * (hi - rel.lo[rel.free]))
    if not rel.has_dev:
        return y
    return np.concatenate([y, np.abs(y - problem.current.counts[rel.free]) + 1.0])


def phase_one_relaxation(rel: Relaxation, z0: np.ndarray | None = None, margin: float = 0.5) -> PhaseOneResult:
    """Find a strictly feasible point by minimizing the worst normalized violation."""
    if rel.const_violation:
        worst = max(v for _, _, v in rel.const_violation)
        return PhaseOneResult(None, worst, worst, 0, "infeasible")
    A, b = rel.A, rel.b
    if len(b) == 0:
        return PhaseOneResult(np.zeros(rel.nz), -np.inf, -np.inf, 0, "feasible")
    z = _phase_one_start(rel) if z0 is None else np.array(z0, dtype=float)
    if rel.strictly_feasible(z):
        norms = np.linalg.norm(A, axis=1)
        v = float(np.max((A @ z - b) / norms))
        return PhaseOneResult(z, v, -np.inf, 0, "feasible")
    norms = np.linalg.norm(A, axis=1)
    An, bn = A / norms[:, None], b / norms
    # variables (z, s); rows An z - s <= bn and -s <= 1 (margin floor keeps the problem bounded)
    nz = rel.nz
    A1 = np.vstack([np.hstack([An, -np.ones((len(bn), 1))]), np.concatenate([np.zeros(nz), [-1.0]])[None, :]])
    b1 = np.concatenate([bn, [1.0]])
    s0 = max(float(np.max(An @ z - bn)) + 1.0, 0.0)
    w0 = np.concatenate([z, [s0]])

    def fval(w):
        return w[-1]

    grad = np.zeros(nz + 1)
    grad[-1] = 1.0
    zero = np.zeros((nz + 1, nz + 1))

    def fderiv(w):
        return grad, zero, zero

    m1 = len(b1)

    def enough(w, t):
        s, lower = w[-1], w[-1] - m1 / t
        # deep enough, provably infeasible, or within a factor two of the best margin
        return s <= -margin or lower > 1e-9 or (s < 0 and s <= 0.5 * lower)

    res = barrier_path(fval, fderiv, A1, b1, w0, PHASE_ONE_SETTINGS, stop=enough)
    z, s = res.z[:-1], float(res.z[-1])
    lower = s - m1 / res.t
    if s < 0 and rel.strictly_feasible(z):
        return PhaseOneResult(z, s, lower, res.newton, "feasible")
    status = "infeasible" if lower > 1e-9 else "empty_interior"
    return PhaseOneResult(z, s, lower, res.newton, status)


def phase_one(problem: AllocationProblem) -> Allocation:
    """A strictly feasible starting allocation for the barrier.

    Raises :class:`InfeasibleProblem` with the minimized worst violation when
    the strict interior is empty (``constraint`` says why).
    """
    rel = Relaxation(problem)
    res = phase_one_relaxation(rel)
    if res.status != "feasible":
        where = rel.most_violated(res.z) if res.z is not None else rel.most_violated(np.zeros(rel.nz))
        raise InfeasibleProblem(f"{res.status.replace('_', ' ')}: {where} (worst violation {res.violation:.3g})",
                                res.violation, where)
    return Allocation(rel.full_x(res.z))


@dataclass
class RelaxedResult:
    """Outcome of :func:`solve_relaxation` on an assembled subproblem."""

    status: str  # "optimal" | "infeasible" | "empty_interior"
    x: Optional[np.ndarray] = None
    value: float = np.inf
    lower_bound: float = -np.inf
    t: float = 0.0
    converged: bool = False
    z: Optional[np.ndarray] = None
    newton: int = 0
    phase_one_newton: int = 0
    outer: int = 0
    trace: list = field(default_factory=list)
    violation: float = 0.0


def solve_relaxation(rel: Relaxation, settings: BarrierSettings, z0=None) -> RelaxedResult:
    if rel.const_violation:
        return RelaxedResult("infeasible", violation=max(v for _, _, v in rel.const_violation))
    if rel.nf == 0:
        x = rel.full_x(np.zeros(0))
        val = rel.value(np.zeros(rel.nz))
        return RelaxedResult("optimal", x, val, val, np.inf, True, np.zeros(rel.nz))
    p1 = phase_one_relaxation(rel, z0)
    if p1.status != "feasible":
        return RelaxedResult(p1.status, z=p1.z, phase_one_newton=p1.newton, violation=p1.violation)
    path = barrier_path(rel.value, rel.derivatives, rel.A, rel.b, p1.z, settings)
    val = rel.value(path.z)
    # central-path duality bound; small safety for inexact centering
    lb = val - len(rel.b) / path.t - 1e-10 * (1.0 + abs(val))
    return RelaxedResult("optimal", rel.full_x(path.z), val, lb, path.t, path.centered, path.z,
                         path.newton, p1.newton, path.outer, path.trace)


def _multipliers(rel: Relaxation, res: RelaxedResult) -> Multipliers:
    problem = rel.problem
    m, n = problem.m, problem.n
    lam, nu, omega = np.zeros(m), np.zeros(m), np.zeros(n)
    if res.z is not None and np.isfinite(res.t) and len(rel.b):
        dual = 1.0 / (res.t * rel.slack(res.z))
        for k, kind in enumerate(rel.kinds):
            if kind == "lower":
                lam[rel.index[k]] = dual[k]
            elif kind == "upper":
                nu[rel.index[k]] = dual[k]
            elif kind == "nonneg":
                omega[rel.index[k]] = dual[k]
    fixed = np.setdiff1d(np.arange(n), rel.free)
    if len(fixed):
        from .model import gradient

        rest = gradient(problem, res.x) - problem.K.T @ lam + problem.K.T @ nu
        omega[fixed] = np.maximum(0.0, rest[fixed])
    return Multipliers(lam, nu, omega)


def solve_relaxed(problem: AllocationProblem, settings: BarrierSettings | None = None,
                  x0: Allocation | None = None) -> ContinuousSolution:
    """Solve the continuous relaxation by the log-barrier method.

    When the strict interior is empty (e.g. ``g = 0`` with demand met only
    at equality) the waste cap is moved into the objective as a quadratic
    penalty and ``mode`` is ``"penalty"``. A genuinely infeasible problem
    raises :class:`InfeasibleProblem`.
    """
    settings = settings or BarrierSettings()
    mode = "barrier"
    rel = Relaxation(problem)
    z0 = None if x0 is None else rel.reduce(np.asarray(x0.counts if isinstance(x0, Allocation) else x0))
    if z0 is not None and not rel.strictly_feasible(z0):
        raise ProblemError("x0 is not strictly feasible")
    res = solve_relaxation(rel, settings, z0)
    if res.status == "empty_interior":
        mode = "penalty"
        rel = Relaxation(problem, hi=problem.upper_bounds, soft_waste=True)
        res = solve_relaxation(rel, settings)
    if res.status != "optimal":
        where = rel.most_violated(res.z if res.z is not None else np.zeros(rel.nz))
        raise InfeasibleProblem(f"relaxation infeasible: {where}", res.violation, where)
    x = np.maximum(res.x, 0.0)
    mult = _multipliers(rel, res)
    wp = waste_penalty(problem, x) if mode == "penalty" else 0.0
    return ContinuousSolution(
        Allocation(x),
        objective(problem, x),
        mult,
        {"phase_one": res.phase_one_newton, "newton": res.newton, "outer": res.outer},
        res.converged,
        mode,
        res.t,
        len(rel.b) / res.t if np.isfinite(res.t) else 0.0,
        wp,
        res.trace,
    )


def _jittered_starts(rel: Relaxation, z_center: np.ndarray, starts: int, rng: np.random.Generator,
                     spread: float) -> list:
    out = [z_center]
    for _ in range(starts - 1):
        y = z_center[: rel.nf] * np.exp(rng.uniform(-spread, spread, size=rel.nf))
        cand = rel.reduce(rel.full_x(np.concatenate([y, np.zeros(rel.nz - rel.nf)])))
        if rel.has_dev:
            cand[rel.nf:] += 0.5 * (z_center[rel.nf:] - np.abs(z_center[: rel.nf] - rel.problem.current.counts[rel.free]))
        theta = 1.0
        while not rel.strictly_feasible(z_center + theta * (cand - z_center)) and theta > 1e-6:
            theta *= 0.5
        out.append(z_center + theta * (cand - z_center))
    return out


def multi_start(problem: AllocationProblem, settings: BarrierSettings | None = None, starts: int = 4,
                seed: int = 42, spread: float = 1.5) -> ContinuousSolution:
    """Best of ``starts`` barrier runs from jittered phase-one points.

    Start 0 is the phase-one point itself. Jitter is multiplicative and
    pulled back toward the phase-one point until strictly feasible. Ties go
    to the lowest start index.
    """
    if starts < 1:
        raise ValueError("starts must be >= 1")
    settings = settings or BarrierSettings()
    rel = Relaxation(problem)
    p1 = phase_one_relaxation(rel)
    if p1.status != "feasible" or rel.nf == 0:
        return solve_relaxed(problem, settings)
    rng = np.random.default_rng(seed)
    best = None
    best_converged = None
    for k, z0 in enumerate(_jittered_starts(rel, p1.z, starts, rng, spread)):
        sol = solve_relaxed(problem, settings, Allocation(rel.full_x(z0)))
        sol.iterations["start"] = k
        if best is None or sol.value < best.value:
            best = sol
        if sol.converged and (best_converged is None or sol.value < best_converged.value):
            best_converged = sol
    return best_converged if best_converged is not None else best
