"""Closed-form solution of the per-row proximal subproblem.

Each row update in the splitting scheme solves, for a row vector phi over its
allowed support,

    minimize    weight^2 * (phi . x0)^2  +  (rho/2) * ||phi - a||^2
    subject to  lo <= phi . x0 <= hi

with ``a`` the proximal target.  Stationarity gives
``phi* = (rho*a - lam*x0') M`` with ``M = (2*weight^2*x0*x0' + rho*I)^{-1}``
and ``lam`` the (upper minus lower) bound multiplier.  Because the
constraint is a single scalar inequality pair, the multiplier has a
closed form with exactly three cases:

    unconstrained optimum  rho*a M x0  above hi  ->  upper bound active,
                           below lo             ->  lower bound active,
                           otherwise            ->  interior, lam = 0.

M is a rank-one update of a scaled identity, so it is never formed densely;
``sherman_morrison_apply`` evaluates ``v @ M`` in O(len(v)).  Boundary ties
classify as INTERIOR (the multiplier is zero there, so the solutions agree).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class InfeasibleRowError(ValueError):
    """The row's box constraint cannot be satisfied."""


class Region(Enum):
    INTERIOR = "interior"
    UPPER_ACTIVE = "upper-active"
    LOWER_ACTIVE = "lower-active"


@dataclass(frozen=True)
class RowProblem:
    """One row's proximal subproblem over its allowed support.

    target  proximal target row ``a`` (current consensus minus multiplier)
    x0      initial-state slice seen by this row (same length as target)
    rho     proximal weight, > 0
    lo, hi  box on the scalar ``phi . x0``; either may be infinite
    weight  square root of the row's cost weight (0 for costless rows)
    """

    target: np.ndarray
    x0: np.ndarray
    rho: float
    lo: float = -np.inf
    hi: float = np.inf
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float).ravel())
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).ravel())
        if self.target.shape != self.x0.shape:
            raise ValueError(
                f"target has length {self.target.shape[0]} but x0 has {self.x0.shape[0]}"
            )
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")
        if np.isnan(self.lo) or np.isnan(self.hi):
            raise ValueError("bounds must not be NaN")


@dataclass(frozen=True)
class RowSolution:
    """Optimal row, its bound multipliers and the active region."""

    phi: np.ndarray
    lam_upper: float
    lam_lower: float
    region: Region

    @property
    def lam(self) -> float:
        return self.lam_upper - self.lam_lower


def sherman_morrison_apply(
    v: np.ndarray, x0: np.ndarray, rho: float, weight: float
) -> np.ndarray:
    """Evaluate ``v @ inv(2*weight^2*x0*x0' + rho*I)`` without forming it.

    Rank-one inverse update:
    ``v @ M = (v - (2 w^2 (v.x0) / (rho + 2 w^2 ||x0||^2)) x0) / rho``.
    """
    v = np.asarray(v, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if v.shape[-1] != x0.shape[0]:
        raise ValueError("v and x0 disagree on length")
    c2 = 2.0 * weight * weight
    denom = rho + c2 * float(x0 @ x0)
    return (v - (c2 * (v @ x0) / denom) * x0) / rho


def _solve_row(p: RowProblem, denom: float) -> RowSolution:
    if p.lo > p.hi:
        raise InfeasibleRowError(f"empty box: lo={p.lo} > hi={p.hi}")
    x0 = p.x0
    a = p.target
    x0_sq = denom - p.rho  # = 2 w^2 ||x0||^2
    if x0_sq == 0.0 and not np.any(x0):
        # x0 = 0: the product phi . x0 vanishes, so the box either admits 0
        # or nothing at all, and the proximal term alone decides the row.
        if p.lo <= 0.0 <= p.hi:
            return RowSolution(a.copy(), 0.0, 0.0, Region.INTERIOR)
        raise InfeasibleRowError(
            f"x0 slice is zero but the box [{p.lo}, {p.hi}] excludes 0"
        )

    # M x0 = x0 / denom, so the scalars below avoid any matrix work.
    a_x0 = float(a @ x0)
    unconstrained = p.rho * a_x0 / denom  # rho * a M x0
    x_m_x = float(x0 @ x0) / denom        # x0' M x0

    lam_upper = lam_lower = 0.0
    region = Region.INTERIOR
    if unconstrained > p.hi:
        lam_upper = (unconstrained - p.hi) / x_m_x
        region = Region.UPPER_ACTIVE
    elif unconstrained < p.lo:
        lam_lower = (p.lo - unconstrained) / x_m_x
        region = Region.LOWER_ACTIVE

    lam = lam_upper - lam_lower
    c2 = 2.0 * p.weight * p.weight
    v = p.rho * a - lam * x0
    phi = (v - (c2 * (float(v @ x0)) / denom) * x0) / p.rho
    return RowSolution(phi, lam_upper, lam_lower, region)


def solve_row(p: RowProblem) -> RowSolution:
    """Closed-form minimizer of one row subproblem with its multipliers."""
    denom = p.rho + 2.0 * p.weight * p.weight * float(p.x0 @ p.x0)
    return _solve_row(p, denom)


def solve_row_block(problems: list) -> list:
    """Solve rows that share one (x0, rho) pair, reusing the shared factor.

    The Sherman-Morrison denominator depends only on (x0, rho, weight), so it
    is computed once per weight class and reused across the block.  Results
    are identical to mapping ``solve_row`` row by row.  An infeasible row
    raises with its position in the block attached.
    """
    if not problems:
        return []
    first = problems[0]
    for k, p in enumerate(problems[1:], start=1):
        if p.rho != first.rho:
            raise ValueError(f"row {k} has rho={p.rho}, block expects {first.rho}")
        if p.x0 is not first.x0 and not np.array_equal(p.x0, first.x0):
            raise ValueError(f"row {k} does not share the block's x0 slice")
    x0_sq = float(first.x0 @ first.x0)
    denoms = {}
    out = []
    for k, p in enumerate(problems):
        denom = denoms.get(p.weight)
        if denom is None:
            denom = p.rho + 2.0 * p.weight * p.weight * x0_sq
            denoms[p.weight] = denom
        try:
            out.append(_solve_row(p, denom))
        except InfeasibleRowError as err:
            raise InfeasibleRowError(f"row {k} of block: {err}") from None
    return out


def kkt_residuals(p: RowProblem, sol: RowSolution) -> tuple:
    """(stationarity, primal violation, complementarity) of a row solution.

    Stationarity is the max-norm of
    ``2 weight^2 (phi.x0) x0 + rho (phi - a) + (lam_upper - lam_lower) x0``;
    primal violation measures the box; complementarity multiplies each
    multiplier with its slack.
    """
    prod = float(sol.phi @ p.x0)
    grad = (
        2.0 * p.weight * p.weight * prod * p.x0
        + p.rho * (sol.phi - p.target)
        + (sol.lam_upper - sol.lam_lower) * p.x0
    )
    stationarity = float(np.max(np.abs(grad))) if grad.size else 0.0
    viol = 0.0
    if np.isfinite(p.hi):
        viol = max(viol, prod - p.hi)
    if np.isfinite(p.lo):
        viol = max(viol, p.lo - prod)
    comp = 0.0
    if np.isfinite(p.hi):
        comp = max(comp, abs(sol.lam_upper * (p.hi - prod)))
    if np.isfinite(p.lo):
        comp = max(comp, abs(sol.lam_lower * (prod - p.lo)))
    return stationarity, max(viol, 0.0), comp
