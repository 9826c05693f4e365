"""End-to-end identity testers in Wasserstein distance.

Both testers share one pipeline: draw a single batch of i.i.d. samples
from the unknown q, aggregate the sample histogram at every level of the
hierarchy tree, and run an L1 identity sub-test of the aggregated counts
against the reference projection p_i~ with a per-level proximity

    eps_i = c2 * 2**(-i) * epsilon / max(1, log2(D / epsilon))

and per-level failure budget delta_total / (levels).  The overall verdict
is the conjunction of the sub-verdicts.  Rationale: the tree metric
dominates the ground metric, and the tree transport cost decomposes into
per-level L1 gaps, so any q with transport cost >= epsilon must disagree
with p at some level by at least a 2**(-i) epsilon / (r - l) margin (the
bottom 2**l * L1 term eats at most epsilon / 4 of the budget because
2**l <= epsilon / 8 and L1 <= 2).  ``decomposition_witness`` checks that
deterministic inequality on exact distributions.

Budgets
-------
worst:     ceil(c * log2(D/eps)^3 * max_i 2**(2i) sqrt(|N_i|) / eps^2)
instance:  ceil(c * log2(D/eps)^3 * max_i max(2**(2i) * ||trunc(p_i)||_{2/3} / eps^2,
                                              2**i / eps))

where trunc removes the largest cluster mass and 2**(-i-4) eps from the
smallest, and p_i is the nearest-center cluster distribution (not the
tree projection: its half/full-scale ball sandwich is what makes the
truncated norm meaningful).  The log factor is clamped below at 1.  The
top level is excluded from sub-testing (its projection is a point mass)
but participates in the budget maxima.

Samples are drawn once and reused across levels; the per-level failure
split tolerates the dependence by a union bound.  Sub-test thresholds are
calibrated at the actual batch size, so the L1 budget preconditions are
not re-imposed here; the budget formulas above govern the draw.

Constants ``c`` (budget) and ``c2`` (level proximity) ship with defaults
fixed by a one-time calibration experiment on the 2-D grid
(scripts/calibrate_constants.py); both are overridable per config.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DoublingConditionWarning, SamplerExhausted
from .l1 import (
    ACCEPT,
    REJECT,
    CalibrationCache,
    L1TestInstance,
    SampleBatch,
    decide_l1,
    quasinorm_two_thirds,
    quasinorm_two_thirds_weighted,
    truncate_minus_max_minus_eps,
    truncate_weighted,
    TruncationExhausted,
)
from .metric import Distribution
from .nets import NetHierarchy, cluster_distribution, doubling_constant
from .tree import TreeEmbedding, level_l1_gaps, project

#: defaults fixed by scripts/calibrate_constants.py on the 2-D grid
DEFAULT_BUDGET_CONSTANT = 2.0
DEFAULT_PROXIMITY_CONSTANT = 0.375


@dataclass(frozen=True)
class WitConfig:
    """Knobs of the Wasserstein identity testers."""

    epsilon: float
    budget_constant: float = DEFAULT_BUDGET_CONSTANT
    level_proximity_constant: float = DEFAULT_PROXIMITY_CONSTANT
    delta_total: float = 1.0 / 3.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.budget_constant <= 0 or self.level_proximity_constant <= 0:
            raise ValueError("constants must be positive")
        if not 0 < self.delta_total < 0.5:
            raise ValueError("delta_total must lie in (0, 1/2)")


def _log_factor(diameter: float, epsilon: float) -> float:
    return max(1.0, math.log2(diameter / epsilon))


def level_proximity(i: int, diameter: float, config: WitConfig) -> float:
    """Per-level L1 proximity, clamped to the attainable range (0, 2]."""
    raw = config.level_proximity_constant * 2.0 ** (-i) * config.epsilon
    return min(2.0, raw / _log_factor(diameter, config.epsilon))


def budget_worst_from_sizes(
    level_sizes: Sequence[tuple[int, float]], diameter: float, config: WitConfig
) -> int:
    eps = config.epsilon
    core = max(2.0 ** (2 * i) * math.sqrt(size) for i, size in level_sizes)
    return math.ceil(
        config.budget_constant * _log_factor(diameter, eps) ** 3 * core / eps**2
    )


def budget_worst(hierarchy: NetHierarchy, config: WitConfig) -> int:
    """Deterministic sample budget of the worst-case tester."""
    sizes = [(i, float(hierarchy.level(i).size)) for i in hierarchy.level_range()]
    return budget_worst_from_sizes(sizes, hierarchy.space.diameter, config)


def _instance_core(i: int, norm: float, eps: float) -> float:
    return max(2.0 ** (2 * i) * norm / eps**2, 2.0 ** i / eps)


def budget_instance_from_profiles(
    profiles: Sequence[tuple[int, np.ndarray, np.ndarray]],
    diameter: float,
    config: WitConfig,
) -> int:
    """Instance budget from weighted cluster-mass profiles (value, count) per level."""
    eps = config.epsilon
    core = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationExhausted)
        for i, values, counts in profiles:
            tv, tc = truncate_weighted(values, counts, 2.0 ** (-i - 4) * eps)
            norm = quasinorm_two_thirds_weighted(tv, tc)
            core = max(core, _instance_core(i, norm, eps))
    return math.ceil(config.budget_constant * _log_factor(diameter, eps) ** 3 * core)


def budget_instance(
    hierarchy: NetHierarchy,
    p: Distribution,
    config: WitConfig,
    *,
    check_doubling: bool = True,
) -> int:
    """Instance sample budget driven by truncated cluster-mass quasinorms.

    The guarantee behind the formula assumes a finite doubling constant of
    (space, p); when the estimator reports an unbounded ratio the budget is
    still computed, with a DoublingConditionWarning.
    """
    if check_doubling:
        report = doubling_constant(hierarchy.space, p, hierarchy.doubling_radii())
        if not report.is_finite:
            warnings.warn(
                "doubling condition fails for the reference distribution; "
                "instance budget and tester guarantees are heuristic here",
                DoublingConditionWarning,
                stacklevel=2,
            )
    eps = config.epsilon
    core = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationExhausted)
        for i in hierarchy.level_range():
            mass = cluster_distribution(hierarchy, p, i).mass
            norm = quasinorm_two_thirds(
                truncate_minus_max_minus_eps(mass, 2.0 ** (-i - 4) * eps)
            )
            core = max(core, _instance_core(i, norm, eps))
    return math.ceil(
        config.budget_constant * _log_factor(hierarchy.space.diameter, eps) ** 3 * core
    )


# -- sample oracles ------------------------------------------------------------

Sampler = Callable[[int], np.ndarray]


class DistributionSampler:
    """i.i.d. point indices from an explicit distribution; owns a seeded stream."""

    def __init__(self, dist: Distribution, seed):
        self._rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        mass = np.asarray(dist.mass, dtype=float)
        self._pvals = mass / mass.sum()
        self._n = len(mass)

    def __call__(self, size: int) -> np.ndarray:
        return self._rng.choice(self._n, size=size, p=self._pvals)


class ReplaySampler:
    """Replays a fixed index sequence; SamplerExhausted once drained."""

    def __init__(self, indices):
        self._indices = np.asarray(indices, dtype=np.int64)
        self._pos = 0

    def __call__(self, size: int) -> np.ndarray:
        if self._pos + size > len(self._indices):
            raise SamplerExhausted(
                f"requested {size} draws, only {len(self._indices) - self._pos} left"
            )
        out = self._indices[self._pos : self._pos + size]
        self._pos += size
        return out


# -- reports -------------------------------------------------------------------


@dataclass(frozen=True)
class LevelOutcome:
    level: int
    proximity: float
    verdict: str
    samples: int


@dataclass(frozen=True)
class TesterReport:
    """Verdict with per-level sub-tester outcomes and sample accounting."""

    mode: str
    verdict: str
    per_level: tuple[LevelOutcome, ...]
    total_samples: int
    budget_formula_value: int

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "mode": self.mode,
            "verdict": self.verdict,
            "per_level": [
                {
                    "level": o.level,
                    "proximity": o.proximity,
                    "verdict": o.verdict,
                    "samples": o.samples,
                }
                for o in self.per_level
            ],
            "total_samples": self.total_samples,
            "budget_formula_value": self.budget_formula_value,
        }


def _run_levels(
    hierarchy: NetHierarchy,
    tree: TreeEmbedding,
    p: Distribution,
    samples: np.ndarray,
    config: WitConfig,
    cache: Optional[CalibrationCache],
) -> tuple[str, tuple[LevelOutcome, ...]]:
    l, r = hierarchy.l, hierarchy.r
    total = len(samples)
    delta_level = config.delta_total / hierarchy.num_levels
    outcomes: list[LevelOutcome] = []
    diameter = hierarchy.space.diameter
    for i in range(l, r):
        counts = np.bincount(
            tree.chains[i - l][samples], minlength=hierarchy.level(i).size
        )
        inst = L1TestInstance(
            known=project(tree, p, i).mass,
            proximity=level_proximity(i, diameter, config),
            failure_prob=delta_level,
        )
        verdict = decide_l1(inst, SampleBatch.from_counts(counts), cache=cache)
        outcomes.append(
            LevelOutcome(level=i, proximity=inst.proximity, verdict=verdict, samples=total)
        )
    overall = ACCEPT if all(o.verdict == ACCEPT for o in outcomes) else REJECT
    return overall, tuple(outcomes)


def _draw(q_sampler: Sampler, budget: int, n: int) -> np.ndarray:
    samples = np.asarray(q_sampler(budget), dtype=np.int64)
    if samples.shape != (budget,):
        raise SamplerExhausted(
            f"sampler returned {samples.shape}, expected ({budget},)"
        )
    if samples.size and (samples.min() < 0 or samples.max() >= n):
        raise ValueError("sampler produced indices outside the space")
    return samples


def wit_worst(
    hierarchy: NetHierarchy,
    tree: TreeEmbedding,
    p: Distribution,
    q_sampler: Sampler,
    config: WitConfig,
    *,
    cache: Optional[CalibrationCache] = None,
) -> TesterReport:
    """Worst-case tester: accepts p = q, rejects W(p, q) >= epsilon, each w.p. >= 2/3."""
    budget = budget_worst(hierarchy, config)
    samples = _draw(q_sampler, budget, hierarchy.space.n)
    verdict, outcomes = _run_levels(hierarchy, tree, p, samples, config, cache)
    return TesterReport(
        mode="worst",
        verdict=verdict,
        per_level=outcomes,
        total_samples=budget,
        budget_formula_value=budget,
    )


def wit_instance(
    hierarchy: NetHierarchy,
    tree: TreeEmbedding,
    p: Distribution,
    q_sampler: Sampler,
    config: WitConfig,
    *,
    cache: Optional[CalibrationCache] = None,
) -> TesterReport:
    """Instance tester: same orchestration with the quasinorm-driven budget."""
    budget = budget_instance(hierarchy, p, config)
    samples = _draw(q_sampler, budget, hierarchy.space.n)
    verdict, outcomes = _run_levels(hierarchy, tree, p, samples, config, cache)
    return TesterReport(
        mode="instance",
        verdict=verdict,
        per_level=outcomes,
        total_samples=budget,
        budget_formula_value=budget,
    )


def decomposition_witness(
    tree: TreeEmbedding, p: Distribution, q: Distribution, epsilon: float
) -> Optional[tuple[int, float, float]]:
    """A level whose exact projection gap certifies rejection is possible.

    For any q with tree transport cost >= epsilon there is a level i with
    L1(p_i~, q_i~) >= (3/8) * 2**(-i) * epsilon / (r - l).  Returns
    (level, gap, threshold) for the first such level, or None.
    """
    l, r = tree.l, tree.r
    if r == l:
        return None
    for i, gap in level_l1_gaps(tree, p, q):
        threshold = (3.0 / 8.0) * 2.0 ** (-i) * epsilon / (r - l)
        if gap >= threshold:
            return i, gap, threshold
    return None
