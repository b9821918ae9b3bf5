"""Lagrangian evaluation and KKT residual diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AllocationProblem, ProblemError, constraint_residuals, counts_of, gradient, objective


@dataclass(frozen=True)
class Multipliers:
    """Multipliers for Kx >= d - mu (lam), Kx <= d + g (nu) and x >= 0 (omega).

    Negative entries are accepted so that :func:`kkt_report` can measure how
    far a candidate is from dual feasibility.
    """

    lam: np.ndarray
    nu: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        for name in ("lam", "nu", "omega"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float).reshape(-1))

    @classmethod
    def zeros(cls, m: int, n: int) -> "Multipliers":
        return cls(np.zeros(m), np.zeros(m), np.zeros(n))

    def check(self, problem: AllocationProblem) -> None:
        if self.lam.shape != (problem.m,) or self.nu.shape != (problem.m,) or self.omega.shape != (problem.n,):
            raise ProblemError("multiplier dimensions do not match the problem")

    def is_dual_feasible(self) -> bool:
        return bool(min(self.lam.min(initial=0), self.nu.min(initial=0), self.omega.min(initial=0)) >= 0)

    def as_dict(self) -> dict:
        return {"lambda": self.lam.tolist(), "nu": self.nu.tolist(), "omega": self.omega.tolist()}


def lagrangian_forms(problem: AllocationProblem, x, mult: Multipliers) -> tuple[float, float]:
    """The Lagrangian computed term-by-term and in the rearranged, x-collected form."""
    mult.check(problem)
    xv = counts_of(x, problem.n)
    prm = problem.params
    d, mu, g, K = problem.demand, problem.uncertainty, problem.waste, problem.K
    Kx = K @ xv
    f = objective(problem, xv).total
    direct = f + mult.lam @ (d - mu - Kx) + mult.nu @ (Kx - d - g) - mult.omega @ xv

    z = problem.E @ xv
    short = np.maximum(0.0, d - Kx)
    rearranged = (prm.alpha * problem.p
                  + mult.lam @ (d - mu) - mult.nu @ (d + g)
                  + xv @ (problem.c - K.T @ mult.lam + K.T @ mult.nu - mult.omega)
                  - prm.alpha * np.sum(np.exp(-prm.beta1 * z))
                  - prm.gamma * np.sum(np.log1p(prm.beta2 * z))
                  + prm.beta3 * short @ short)
    return float(direct), float(rearranged)


def lagrangian(problem: AllocationProblem, x, mult: Multipliers) -> float:
    return lagrangian_forms(problem, x, mult)[0]


def residual_scale(problem: AllocationProblem) -> float:
    return float(max(1.0, np.abs(problem.c).max(initial=0.0), np.abs(problem.demand).max(initial=0.0)))


@dataclass(frozen=True)
class KktReport:
    stationarity_norm: float
    primal_violation: float
    dual_violation: float
    comp_slack_max: float
    lagrangian_value: float
    scale: float
    # stationarity residual range over both one-sided shortage derivatives at ties
    stationarity_interval: tuple[float, float]

    def scaled(self) -> dict:
        return {
            "stationarity": self.stationarity_norm / self.scale,
            "primal": self.primal_violation / self.scale,
            "dual": self.dual_violation / self.scale,
            "comp_slack": self.comp_slack_max / self.scale,
        }

    def within(self, stationarity: float = 1e-4, primal: float = 1e-8, comp_slack: float = 1e-4,
               dual: float = 0.0) -> bool:
        s = self.scaled()
        return (min(self.stationarity_interval) / self.scale <= stationarity and s["primal"] <= primal
                and s["comp_slack"] <= comp_slack and s["dual"] <= dual)

    def as_dict(self) -> dict:
        return {
            "stationarity_norm": self.stationarity_norm,
            "primal_violation": self.primal_violation,
            "dual_violation": self.dual_violation,
            "comp_slack_max": self.comp_slack_max,
            "lagrangian_value": self.lagrangian_value,
            "scale": self.scale,
            "stationarity_interval": list(self.stationarity_interval),
            "scaled": self.scaled(),
        }


def lagrangian_gradient(problem: AllocationProblem, x, mult: Multipliers, tie_shortage: bool = False) -> np.ndarray:
    """grad_x L. With ``tie_shortage`` the shortage indicator is 1 at d_r == (Kx)_r."""
    xv = counts_of(x, problem.n)
    grad_f = gradient(problem, xv)
    if tie_shortage:
        Kx = problem.K @ xv
        ties = problem.demand == Kx
        # the hinge term contributes -2 beta3 K^T (d - Kx) on tied rows, which is zero there
        grad_f = grad_f - 2.0 * problem.params.beta3 * problem.K.T @ np.where(ties, problem.demand - Kx, 0.0)
    return grad_f - problem.K.T @ mult.lam + problem.K.T @ mult.nu - mult.omega


def kkt_report(problem: AllocationProblem, x, mult: Multipliers) -> KktReport:
    mult.check(problem)
    xv = counts_of(x, problem.n)
    res = constraint_residuals(problem, xv)
    stat = float(np.abs(lagrangian_gradient(problem, xv, mult)).max(initial=0.0))
    stat_tie = float(np.abs(lagrangian_gradient(problem, xv, mult, tie_shortage=True)).max(initial=0.0))
    primal = float(max(0.0, -res.lower.min(initial=0.0), -res.upper.min(initial=0.0), -xv.min(initial=0.0)))
    dual = float(max(0.0, -mult.lam.min(initial=0.0), -mult.nu.min(initial=0.0), -mult.omega.min(initial=0.0)))
    comp = float(max(np.abs(mult.lam * res.lower).max(initial=0.0),
                     np.abs(mult.nu * res.upper).max(initial=0.0),
                     np.abs(mult.omega * xv).max(initial=0.0)))
    return KktReport(stat, primal, dual, comp, lagrangian(problem, xv, mult), residual_scale(problem),
                     (min(stat, stat_tie), max(stat, stat_tie)))


@dataclass(frozen=True)
class GapEstimate:
    value: float
    nonconvex: bool
    infeasible: bool

    def as_dict(self) -> dict:
        return {"value": self.value, "nonconvex": self.nonconvex, "infeasible": self.infeasible}


def duality_gap_estimate(problem: AllocationProblem, x, mult: Multipliers) -> GapEstimate:
    """f(x) - L(x, mult), i.e. the weighted constraint slack.

    Not clamped: a primal-infeasible ``x`` can give a negative value, which
    is flagged instead.
    """
    xv = counts_of(x, problem.n)
    gap = objective(problem, xv).total - lagrangian(problem, xv, mult)
    infeasible = not constraint_residuals(problem, xv).feasible(tol=1e-9) or bool(np.any(xv < 0))
    return GapEstimate(float(gap), problem.params.alpha > 0, infeasible)
