"""Well-separated net hierarchies, cluster distributions and the doubling estimator.

A well-separated s-net is a subset N of the points that is simultaneously

    an s-net:      every point lies within distance s of some center,
    an s-packing:  distinct centers are strictly more than s apart.

A hierarchy holds one net per dyadic scale 2**i for i in [l, r] where
l = floor(log2(epsilon / 8)) and r = ceil(log2(diameter)); the top net is a
single center because 2**r >= diameter.

Nets are built greedily in point-index order (deterministic, reproducible);
a seeded random visiting order is available behind the ``rng`` flag.  All
logs are base 2.  Ball membership is closed (d <= radius).

Cluster distributions aggregate mass by nearest-center assignment (ties to
the lowest center index).  For every center x of a 2**i-net the strict
packing property forces

    p(B(x, 2**(i-1)))  <=  cluster mass at x  <=  p(B(x, 2**i))

with exact float comparisons, because the half-scale balls of distinct
centers cannot intersect and clusters sit inside the full-scale ball; the
mass sums are computed with correct rounding to keep subset sums monotone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EpsilonOutOfRange, LevelOutOfRange, TooLargeForExact
from .metric import Distribution, FiniteMetricSpace
from ._util import ceil_log2, floor_log2, fsum_where


@dataclass(frozen=True)
class NetLevel:
    """One level of the hierarchy: centers of a well-separated scale-net.

    ``centers`` are point indices in ascending order; ``assign`` maps every
    point to the ordinal (into ``centers``) of its nearest center, ties
    broken toward the lowest center index.
    """

    level: int
    scale: float
    centers: np.ndarray
    assign: np.ndarray

    @property
    def size(self) -> int:
        return len(self.centers)

    def center_of(self, point: int) -> int:
        return int(self.centers[self.assign[point]])

    def cluster_members(self, ordinal: int) -> np.ndarray:
        return np.flatnonzero(self.assign == ordinal)


def _nearest_center_assignment(space: FiniteMetricSpace, centers: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum; centers are sorted ascending, so ties
    # resolve to the lowest center index.
    return np.argmin(space.dist[:, centers], axis=1)


def build_net(
    space: FiniteMetricSpace,
    scale: float,
    *,
    rng: Optional[np.random.Generator] = None,
) -> NetLevel:
    """Greedy well-separated net at the given scale.

    A point becomes a center iff its distance to all previously chosen
    centers exceeds ``scale``.  The default visiting order is point-index
    order; pass ``rng`` for a seeded random order (the result is still a
    valid well-separated net, just a different one).
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    order = np.arange(space.n) if rng is None else rng.permutation(space.n)
    centers: list[int] = []
    for x in order:
        if all(space.dist[x, c] > scale for c in centers):
            centers.append(int(x))
    centers_arr = np.array(sorted(centers), dtype=int)
    return NetLevel(
        level=floor_log2(scale),
        scale=float(scale),
        centers=centers_arr,
        assign=_nearest_center_assignment(space, centers_arr),
    )


@dataclass(frozen=True)
class LevelValidation:
    """Outcome of checking the net and packing predicates."""

    ok: bool
    net_violation: Optional[int] = None          # a point with no center within scale
    packing_violation: Optional[tuple[int, int]] = None  # a center pair at distance <= scale

    def __bool__(self) -> bool:
        return self.ok


def validate_level(space: FiniteMetricSpace, level: NetLevel) -> LevelValidation:
    """Confirm both predicates or report the first violation found."""
    centers = np.asarray(level.centers, dtype=int)
    if centers.size and (centers.min() < 0 or centers.max() >= space.n):
        raise ValueError("centers must be point indices of the space")
    if centers.size == 0:
        return LevelValidation(ok=False, net_violation=0 if space.n else None)
    nearest = space.dist[:, centers].min(axis=1)
    bad = np.flatnonzero(nearest > level.scale)
    if bad.size:
        return LevelValidation(ok=False, net_violation=int(bad[0]))
    for ai in range(len(centers)):
        for bi in range(ai + 1, len(centers)):
            if space.dist[centers[ai], centers[bi]] <= level.scale:
                return LevelValidation(
                    ok=False, packing_violation=(int(centers[ai]), int(centers[bi]))
                )
    return LevelValidation(ok=True)


@dataclass(frozen=True)
class NetHierarchy:
    """Nets at scales 2**i for i in [l, r], with parent maps between levels."""

    space: FiniteMetricSpace
    epsilon: float
    l: int
    r: int
    levels: tuple[NetLevel, ...]
    parents: tuple[np.ndarray, ...]  # per i in [l, r-1]: ordinal map N_i -> N_{i+1}

    def level(self, i: int) -> NetLevel:
        if not self.l <= i <= self.r:
            raise LevelOutOfRange(f"level {i} outside [{self.l}, {self.r}]")
        return self.levels[i - self.l]

    def parent_map(self, i: int) -> np.ndarray:
        if not self.l <= i < self.r:
            raise LevelOutOfRange(f"parent map {i} outside [{self.l}, {self.r - 1}]")
        return self.parents[i - self.l]

    @property
    def num_levels(self) -> int:
        return self.r - self.l + 1

    def level_range(self) -> range:
        return range(self.l, self.r + 1)

    def doubling_radii(self) -> list[float]:
        return [2.0 ** i for i in range(self.l - 1, self.r + 1)]


def _level_bounds(space: FiniteMetricSpace, epsilon: float) -> tuple[int, int]:
    if epsilon <= 0:
        raise EpsilonOutOfRange(f"epsilon must be positive, got {epsilon}")
    if space.diameter <= 0:
        raise EpsilonOutOfRange("hierarchy requires a space with positive diameter")
    l = floor_log2(epsilon / 8.0)
    r = ceil_log2(space.diameter)
    if l > r:
        raise EpsilonOutOfRange(
            f"epsilon={epsilon} too large for diameter {space.diameter}: l={l} > r={r}"
        )
    return l, r


def assemble_hierarchy(
    space: FiniteMetricSpace, epsilon: float, levels: Sequence[NetLevel]
) -> NetHierarchy:
    """Assemble and validate a hierarchy from explicitly supplied nets."""
    l, r = _level_bounds(space, epsilon)
    if [lv.level for lv in levels] != list(range(l, r + 1)):
        raise ValueError(f"levels must cover exactly [{l}, {r}]")
    for lv in levels:
        if lv.scale != 2.0 ** lv.level:
            raise ValueError(f"level {lv.level} has scale {lv.scale}, expected {2.0 ** lv.level}")
        result = validate_level(space, lv)
        if not result:
            raise ValueError(
                f"level {lv.level} fails validation: net_violation={result.net_violation}, "
                f"packing_violation={result.packing_violation}"
            )
    if levels[-1].size != 1:
        raise ValueError("top level must contain a single center")
    parents = tuple(
        levels[k + 1].assign[levels[k].centers] for k in range(len(levels) - 1)
    )
    return NetHierarchy(
        space=space, epsilon=float(epsilon), l=l, r=r,
        levels=tuple(levels), parents=parents,
    )


def build_hierarchy(
    space: FiniteMetricSpace,
    epsilon: float,
    *,
    rng: Optional[np.random.Generator] = None,
) -> NetHierarchy:
    """Greedy net per level i in [l, r].

    The top net is a singleton by construction: 2**r >= diameter, so after
    the first center is chosen no other point can be further than the scale.
    """
    l, r = _level_bounds(space, epsilon)
    levels = [build_net(space, 2.0 ** i, rng=rng) for i in range(l, r + 1)]
    # build_net derives the level from the scale; force exact dyadic labels
    levels = [
        NetLevel(level=i, scale=2.0 ** i, centers=lv.centers, assign=lv.assign)
        for i, lv in zip(range(l, r + 1), levels)
    ]
    return assemble_hierarchy(space, epsilon, levels)


def net_packing_duality_check(space: FiniteMetricSpace, scale: float) -> tuple[int, int]:
    """Exact minimum net size and maximum packing size by exhaustive search.

    Also asserts the duality chain N(s) <= P(s) <= N(s/2).  Limited to
    n <= 14 points (TooLargeForExact beyond).
    """
    n = space.n
    if n > 14:
        raise TooLargeForExact(f"exhaustive search limited to n <= 14, got {n}")

    def min_net(s: float) -> int:
        cover = [0] * n
        for j in range(n):
            mask = 0
            for x in range(n):
                if space.dist[x, j] <= s:
                    mask |= 1 << x
            cover[j] = mask
        full = (1 << n) - 1
        union = [0] * (1 << n)
        best = n
        for m in range(1, 1 << n):
            low = m & (-m)
            union[m] = union[m ^ low] | cover[low.bit_length() - 1]
            if union[m] == full:
                best = min(best, m.bit_count())
        return best

    def max_packing(s: float) -> int:
        conflict = [0] * n
        for j in range(n):
            mask = 0
            for x in range(n):
                if x != j and space.dist[x, j] <= s:
                    mask |= 1 << x
            conflict[j] = mask
        valid = [True] * (1 << n)
        best = 0
        for m in range(1, 1 << n):
            low = m & (-m)
            rest = m ^ low
            valid[m] = valid[rest] and (conflict[low.bit_length() - 1] & rest) == 0
            if valid[m]:
                best = max(best, m.bit_count())
        return best

    n_eps = min_net(scale)
    p_eps = max_packing(scale)
    n_half = min_net(scale / 2.0)
    if not (n_eps <= p_eps <= n_half):
        raise AssertionError(
            f"net/packing duality violated: N({scale})={n_eps}, "
            f"P({scale})={p_eps}, N({scale / 2})={n_half}"
        )
    return n_eps, p_eps


@dataclass(frozen=True)
class ClusterDistribution:
    """Mass aggregated by nearest-center assignment at one level."""

    level: int
    centers: np.ndarray
    mass: np.ndarray


def cluster_distribution(
    hierarchy: NetHierarchy, p: Distribution, i: int
) -> ClusterDistribution:
    """Cluster masses at level i, with the ball sandwich asserted exactly.

    For every center x_j:  p(B(x_j, 2**(i-1))) <= mass[j] <= p(B(x_j, 2**i)).
    The comparison uses no tolerance; it follows from the net and packing
    predicates, and correctly rounded sums keep it exact in float.
    """
    if not p.space.same_as(hierarchy.space):
        raise LevelOutOfRange("distribution not on the hierarchy's space")
    lv = hierarchy.level(i)
    mass = np.array(
        [fsum_where(p.mass, lv.assign == j) for j in range(lv.size)]
    )
    half = lv.scale / 2.0
    for j, c in enumerate(lv.centers):
        lo = p.ball_mass(int(c), half)
        hi = p.ball_mass(int(c), lv.scale)
        if not (lo <= mass[j] <= hi):
            raise AssertionError(
                f"cluster sandwich violated at level {i}, center {c}: "
                f"{lo} <= {mass[j]} <= {hi} fails"
            )
    mass.setflags(write=False)
    return ClusterDistribution(level=i, centers=lv.centers, mass=mass)


@dataclass(frozen=True)
class DoublingReport:
    """Largest observed ratio p(B(x, 2r)) / p(B(x, r)) over a radius grid."""

    constant: float
    witnesses: tuple[tuple[int, float, float], ...]  # (point, radius, ratio)
    radii_grid: tuple[float, ...]

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.constant)


def default_doubling_radii(space: FiniteMetricSpace) -> list[float]:
    """Powers of two spanning [min positive distance / 2, 2 * diameter]."""
    if space.diameter <= 0:
        return [1.0]
    lo = floor_log2(space.min_positive_distance()) - 1
    hi = ceil_log2(space.diameter)
    return [2.0 ** i for i in range(lo, hi + 1)]


def doubling_constant(
    space: FiniteMetricSpace,
    p: Distribution,
    radii: Optional[Sequence[float]] = None,
    *,
    top_witnesses: int = 10,
) -> DoublingReport:
    """Estimate the doubling constant of (space, p) over a radius grid.

    Ratio conventions per (x, r): 0/0 counts as 1, positive/0 as +inf.
    ``radii`` defaults to the dyadic grid of ``default_doubling_radii``;
    pass ``hierarchy.doubling_radii()`` to match a hierarchy's range.
    """
    if radii is None:
        radii = default_doubling_radii(space)
    radii = list(radii)
    if not radii:
        raise ValueError("radii grid must be nonempty")
    rows: list[tuple[int, float, float]] = []
    for x in range(space.n):
        for r in radii:
            inner = p.ball_mass(x, r)
            outer = p.ball_mass(x, 2.0 * r)
            if inner == 0.0:
                ratio = 1.0 if outer == 0.0 else math.inf
            else:
                ratio = outer / inner
            rows.append((x, float(r), ratio))
    rows.sort(key=lambda t: -t[2])
    constant = rows[0][2] if rows else 1.0
    return DoublingReport(
        constant=float(constant),
        witnesses=tuple(rows[:top_witnesses]),
        radii_grid=tuple(float(r) for r in radii),
    )
