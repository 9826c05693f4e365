"""Finite metric spaces, distributions over them, and an exact transport oracle.

Conventions
-----------
A space is an n x n symmetric matrix of nonnegative distances with zero
diagonal satisfying the triangle inequality (validated at construction,
violations are hard errors).  Zero distance between distinct points is
allowed, i.e. pseudometrics are legal; a space with n >= 2 points must
still have positive diameter.

A distribution is a nonnegative mass vector over the points summing to 1
within ``MASS_TOL``.

``wasserstein_exact`` solves the transportation linear program restricted
to the supports of the two marginals and certifies optimality with a pair
of Kantorovich dual potentials (u, v) defined on the whole space:

    u[a] + v[b] <= dist[a, b]           for every pair (a, b),
    sum_a u[a] p[a] + sum_b v[b] q[b] == cost   (strong duality),
    u[a] + v[b] == dist[a, b]           on the support of the optimal flow.

The potentials returned by the LP solver live on the supports only; they
are extended to all points by the c-transform, which preserves feasibility
and the dual objective, so the certificate covers every pair.

All types are immutable after construction and safe to share across
threads; the solver is a pure function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import (
    AsymmetryError,
    NegativeDistance,
    NonzeroDiagonal,
    OverlappingBalls,
    SpaceMismatch,
    TriangleViolation,
    ZeroDiameter,
)
from ._util import fsum_where

#: default tolerance for mass-balance checks (row/column sums, total mass)
MASS_TOL = 1e-9
#: default tolerance for dual-certificate slack
DUAL_SLACK_TOL = 1e-7


@dataclass(frozen=True)
class FiniteMetricSpace:
    """Point set with pairwise distances; ``dist`` is read-only."""

    dist: np.ndarray
    labels: Optional[tuple[str, ...]] = None
    diameter: float = field(default=0.0)

    @property
    def n(self) -> int:
        return self.dist.shape[0]

    def ball(self, center: int, radius: float) -> np.ndarray:
        """Boolean membership mask of the closed ball B(center, radius)."""
        return self.dist[center] <= radius

    def min_positive_distance(self) -> float:
        off = self.dist[~np.eye(self.n, dtype=bool)]
        pos = off[off > 0]
        return float(pos.min()) if pos.size else 0.0

    def same_as(self, other: "FiniteMetricSpace") -> bool:
        return self is other or (
            self.dist.shape == other.dist.shape and np.array_equal(self.dist, other.dist)
        )


def build_space(dist_matrix, labels: Optional[Sequence[str]] = None) -> FiniteMetricSpace:
    """Validate a distance matrix and return the space with cached diameter.

    Raises NegativeDistance, AsymmetryError, NonzeroDiagonal,
    TriangleViolation (with a witnessing triple) or ZeroDiameter.
    """
    d = np.asarray(dist_matrix, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError("distance matrix entries must be finite")
    n = d.shape[0]
    if n == 0:
        raise ValueError("empty space")
    if np.any(d < 0):
        a, b = np.argwhere(d < 0)[0]
        raise NegativeDistance(f"d({a},{b}) = {d[a, b]} < 0")
    if np.any(d != d.T):
        a, b = np.argwhere(d != d.T)[0]
        raise AsymmetryError(f"d({a},{b}) = {d[a, b]} but d({b},{a}) = {d[b, a]}")
    if np.any(np.diag(d) != 0):
        a = int(np.argwhere(np.diag(d) != 0)[0][0])
        raise NonzeroDiagonal(f"d({a},{a}) = {d[a, a]} != 0")
    # triangle inequality, checked over all intermediate points b
    for b in range(n):
        ok = d <= d[:, [b]] + d[[b], :]
        if not np.all(ok):
            a, c = np.argwhere(~ok)[0]
            raise TriangleViolation(int(a), int(b), int(c), float(d[a, c]), float(d[a, b] + d[b, c]))
    diameter = float(d.max())
    if n >= 2 and diameter <= 0:
        raise ZeroDiameter("space with n >= 2 points must have positive diameter")
    d = d.copy()
    d.setflags(write=False)
    return FiniteMetricSpace(dist=d, labels=tuple(labels) if labels else None, diameter=diameter)


@dataclass(frozen=True)
class Distribution:
    """Probability vector over the points of a space."""

    mass: np.ndarray
    space: FiniteMetricSpace

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.mass > 0)

    def ball_mass(self, center: int, radius: float) -> float:
        """Mass of the closed ball, summed with correct rounding."""
        return fsum_where(self.mass, self.space.ball(center, radius))


def make_distribution(mass, space: FiniteMetricSpace, *, mass_tol: float = MASS_TOL) -> Distribution:
    m = np.asarray(mass, dtype=float)
    if m.shape != (space.n,):
        raise ValueError(f"mass vector has shape {m.shape}, expected ({space.n},)")
    if np.any(m < 0):
        raise ValueError("mass entries must be nonnegative")
    total = math.fsum(m)
    if abs(total - 1.0) > mass_tol:
        raise ValueError(f"mass sums to {total}, not 1 within {mass_tol}")
    m = m.copy()
    m.setflags(write=False)
    return Distribution(mass=m, space=space)


def _require_same_space(p: Distribution, q: Distribution) -> None:
    if not p.space.same_as(q.space):
        raise SpaceMismatch("distributions live on different spaces")


def l1_distance(p: Distribution, q: Distribution) -> float:
    """sum_j |p_j - q_j|, a value in [0, 2]."""
    _require_same_space(p, q)
    return float(np.abs(p.mass - q.mass).sum())


@dataclass(frozen=True)
class TransportPlan:
    """Optimal coupling with its cost and a dual optimality certificate."""

    flow: np.ndarray
    cost: float
    potential_u: np.ndarray
    potential_v: np.ndarray


def verify_transport_plan(
    p: Distribution,
    q: Distribution,
    plan: TransportPlan,
    *,
    mass_tol: float = MASS_TOL,
    slack_tol: float = DUAL_SLACK_TOL,
) -> None:
    """Check marginals, cost consistency and the dual certificate; raise on failure."""
    d = p.space.dist
    flow = plan.flow
    if np.any(flow < -mass_tol):
        raise AssertionError("negative flow entry")
    row_err = np.abs(flow.sum(axis=1) - p.mass).max()
    col_err = np.abs(flow.sum(axis=0) - q.mass).max()
    if row_err > mass_tol or col_err > mass_tol:
        raise AssertionError(f"marginal mismatch: rows {row_err}, cols {col_err}")
    cost = float((flow * d).sum())
    if abs(cost - plan.cost) > mass_tol:
        raise AssertionError(f"stored cost {plan.cost} != flow cost {cost}")
    u, v = plan.potential_u, plan.potential_v
    slack = d - u[:, None] - v[None, :]
    if slack.min() < -slack_tol:
        raise AssertionError(f"dual infeasible: min slack {slack.min()}")
    gap = plan.cost - (float(u @ p.mass) + float(v @ q.mass))
    if abs(gap) > slack_tol:
        raise AssertionError(f"duality gap {gap}")
    on_support = flow > mass_tol
    if on_support.any() and np.abs(slack[on_support]).max() > slack_tol:
        raise AssertionError("complementary slackness violated on flow support")


def wasserstein_exact(
    p: Distribution,
    q: Distribution,
    *,
    mass_tol: float = MASS_TOL,
    slack_tol: float = DUAL_SLACK_TOL,
) -> TransportPlan:
    """Exact optimal transport between p and q.

    Solves the transportation LP on the complete bipartite graph between
    supp(p) and supp(q), so support sizes drive the cost, not n.  Every
    returned plan is validated against its dual certificate.
    """
    _require_same_space(p, q)
    n = p.space.n
    d = p.space.dist

    if np.array_equal(p.mass, q.mass):
        flow = np.diag(p.mass)
        flow.setflags(write=False)
        zero = np.zeros(n)
        plan = TransportPlan(flow=flow, cost=0.0, potential_u=zero, potential_v=zero)
        verify_transport_plan(p, q, plan, mass_tol=mass_tol, slack_tol=slack_tol)
        return plan

    src = p.support()
    dst = q.support()
    ms, mt = len(src), len(dst)
    cost_sub = d[np.ix_(src, dst)]

    nv = ms * mt
    row_idx = np.repeat(np.arange(ms), mt)
    col_idx = np.tile(np.arange(mt), ms)
    a_eq = sp.csr_matrix(
        (
            np.ones(2 * nv),
            (
                np.concatenate([row_idx, ms + col_idx]),
                np.concatenate([np.arange(nv), np.arange(nv)]),
            ),
        ),
        shape=(ms + mt, nv),
    )
    b_eq = np.concatenate([p.mass[src], q.mass[dst]])
    res = linprog(cost_sub.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")

    flow = np.zeros((n, n))
    flow[np.ix_(src, dst)] = np.clip(res.x.reshape(ms, mt), 0.0, None)
    cost = float((flow * d).sum())

    # Extend the support duals to the whole space by c-transform.  Feasibility
    # on all pairs follows from the second transform; the objective can only
    # grow, and weak duality caps it at the primal cost, so optimality and
    # complementary slackness are preserved.
    v_sub = res.eqlin.marginals[ms:]
    u_full = (d[:, dst] - v_sub[None, :]).min(axis=1)
    v_full = (d - u_full[:, None]).min(axis=0)

    flow.setflags(write=False)
    u_full.setflags(write=False)
    v_full.setflags(write=False)
    plan = TransportPlan(flow=flow, cost=cost, potential_u=u_full, potential_v=v_full)
    verify_transport_plan(p, q, plan, mass_tol=mass_tol, slack_tol=slack_tol)
    return plan


def wasserstein_lower_bound_packing(
    p: Distribution,
    q: Distribution,
    centers: Sequence[int],
    radius: float,
) -> float:
    """sum_c radius * |p(B(c, radius)) - q(B(c, radius))| over disjoint balls.

    The balls must be pairwise disjoint (checked; OverlappingBalls otherwise).
    When q concentrates the mass of each ball at its center, the value lower
    bounds the exact transport cost: the mass imbalance of each ball must
    cross its boundary, paying at least ``radius`` per unit.  For other q the
    value is still returned, as an informational statistic.
    """
    _require_same_space(p, q)
    centers = list(centers)
    masks = [p.space.ball(c, radius) for c in centers]
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            if np.any(masks[i] & masks[j]):
                y = int(np.flatnonzero(masks[i] & masks[j])[0])
                raise OverlappingBalls(
                    f"balls around {centers[i]} and {centers[j]} share point {y}"
                )
    return math.fsum(
        radius * abs(fsum_where(p.mass, m) - fsum_where(q.mass, m)) for m in masks
    )


def line_wasserstein_cdf(coords, p_mass, q_mass) -> float:
    """Closed-form W1 on a line: integral of |CDF_p - CDF_q|.

    Independent of the LP solver; used as an oracle for 1-D spaces.
    """
    x = np.asarray(coords, dtype=float)
    order = np.argsort(x, kind="stable")
    x = x[order]
    cp = np.cumsum(np.asarray(p_mass, dtype=float)[order])
    cq = np.cumsum(np.asarray(q_mass, dtype=float)[order])
    return float(np.sum(np.abs(cp[:-1] - cq[:-1]) * np.diff(x)))
