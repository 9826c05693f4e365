"""Identity sub-testers for discrete distributions in L1 distance.

Given the full description of a reference vector p on [m], a proximity
eps1 and sample counts from an unknown q, the tester distinguishes q = p
from ||p - q||_1 >= eps1.

Statistic
---------
The reference is split by the truncation rule ``p^{-max}_{-eps1/16}``:
remove the single largest entry, then remove eps1/16 mass from the
smallest entries (the boundary entry fractionally).  Entries surviving
with positive mass form the retained set S; entries removed entirely,
except the maximum, form the tail bucket B.  With s raw samples and
counts X the tester computes

    chi    = sum_{j in S} ((X_j - s p_j)^2 - X_j) / p_j^(2/3)
    bucket = | X(B) - s p(B) |

and accepts iff both fall below thresholds calibrated by Monte Carlo under
the null (sampling from p itself) at the 1 - delta/2 quantiles, so a true
q = p is accepted with probability at least 1 - delta by a union bound.
The maximum entry is not tested directly: its deviation is dominated by
the total deviation of the other entries, and mass that q moves onto
entries where p is tiny or zero lands in the bucket.

The worst-case flavor is the same decision rule; only the sample budget
formulas differ (sqrt(m)/eps^2 versus the truncated 2/3-quasinorm bound).

Calibration is keyed by the sorted mass profile: the null distribution of
both statistics is invariant under relabeling of the support, so permuted
references share thresholds, which makes the verdict permutation
invariant.  Simulation seeds derive from a content hash of the key, so
results are reproducible without global state.  Thresholds are cached per
(profile, eps1, delta, budget); the cache is safe under concurrent readers.
"""
from __future__ import annotations

import hashlib
import json
import math
import threading
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import InsufficientSamples, TruncationExhausted

#: multiplier in both sample-budget formulas, fixed by the calibration
#: experiment in scripts/calibrate_constants.py
DEFAULT_SAMPLE_CONSTANT = 6.0

Verdict = str  # "accept" | "reject"
ACCEPT: Verdict = "accept"
REJECT: Verdict = "reject"

_LONG = np.longdouble
_TWO_THIRDS = _LONG(2) / _LONG(3)


def quasinorm_two_thirds(p) -> float:
    """(sum_j p_j^(2/3))^(3/2); 1 for a point mass, sqrt(n) for uniform.

    Computed in extended precision so the uniform value rounds to exactly
    sqrt(n) whenever sqrt(n) is representable.
    """
    arr = np.asarray(p, dtype=float)
    if arr.size == 0:
        return 0.0
    if np.any(arr < 0):
        raise ValueError("probability vector entries must be nonnegative")
    s = np.power(arr.astype(_LONG), _TWO_THIRDS).sum()
    return float(np.power(s, _LONG(1.5)))


def quasinorm_two_thirds_weighted(values, counts) -> float:
    """Quasinorm of a vector given as (value, multiplicity) pairs.

    Multiplicities may be large floats; used where materializing the vector
    is impossible (e.g. lattice cluster masses in high dimension).
    """
    v = np.asarray(values, dtype=float)
    c = np.asarray(counts, dtype=float)
    if np.any(v < 0) or np.any(c < 0):
        raise ValueError("values and counts must be nonnegative")
    s = (c.astype(_LONG) * np.power(v.astype(_LONG), _TWO_THIRDS)).sum()
    return float(np.power(s, _LONG(1.5)))


def truncate_minus_max_minus_eps(p, eps: float) -> np.ndarray:
    """The truncated vector p^{-max}_{-eps}, same length with removed mass zeroed.

    Removes the single largest entry entirely (lowest index on ties), then
    removes entries in ascending mass order until exactly ``eps`` more mass
    is gone; the boundary entry is removed fractionally, which makes the
    truncated quasinorm continuous in eps.  If eps meets or exceeds the
    remaining mass the result is all zeros, returned with a
    TruncationExhausted warning rather than an error.
    """
    arr = np.asarray(p, dtype=float)
    if not 0 <= eps:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    out = arr.copy()
    if out.size == 0:
        return out
    jmax = int(np.argmax(out))
    out[jmax] = 0.0
    if eps == 0:
        return out
    order = np.argsort(out, kind="stable")
    taken: list[float] = []
    for j in order:
        if j == jmax:
            continue
        remaining = eps - math.fsum(taken)
        if remaining <= 0:
            break
        if out[j] <= remaining:
            taken.append(float(out[j]))
            out[j] = 0.0
        else:
            out[j] = out[j] - remaining
            taken.append(remaining)
            break
    if np.count_nonzero(out) == 0:
        warnings.warn(
            f"truncation eps={eps} meets or exceeds removable mass; vector emptied",
            TruncationExhausted,
            stacklevel=2,
        )
    return out


def truncate_weighted(values, counts, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Weighted-representation version of the truncation rule."""
    v = np.asarray(values, dtype=float).copy()
    c = np.asarray(counts, dtype=float).copy()
    keep = (c > 0) & (v > 0)
    v, c = v[keep], c[keep]
    if v.size == 0:
        return v, c
    jmax = int(np.argmax(v))
    c[jmax] -= 1
    remaining = float(eps)
    order = np.argsort(v, kind="stable")
    out_v: list[float] = []
    out_c: list[float] = []
    for j in order:
        if c[j] <= 0:
            continue
        block = v[j] * c[j]
        if remaining >= block:
            remaining -= block
            continue
        if remaining > 0:
            drop = min(math.floor(remaining / v[j]), c[j])
            kept = c[j] - drop
            remaining -= drop * v[j]
            if kept >= 1 and remaining > 0:
                out_v.append(v[j] - remaining)
                out_c.append(1.0)
                kept -= 1
                remaining = 0.0
            if kept > 0:
                out_v.append(v[j])
                out_c.append(kept)
        else:
            out_v.append(v[j])
            out_c.append(c[j])
    if remaining > 1e-15 and not out_v:
        warnings.warn(
            f"truncation eps={eps} meets or exceeds removable mass; vector emptied",
            TruncationExhausted,
            stacklevel=2,
        )
    return np.asarray(out_v), np.asarray(out_c)


@dataclass(frozen=True)
class L1TestInstance:
    """Reference vector on [m], proximity eps1 in (0, 2], failure prob delta."""

    known: np.ndarray
    proximity: float
    failure_prob: float

    def __post_init__(self):
        arr = np.asarray(self.known, dtype=float)
        if np.any(arr < 0) or abs(math.fsum(arr) - 1.0) > 1e-9:
            raise ValueError("known must be a probability vector")
        if not 0 < self.proximity <= 2:
            raise ValueError(f"proximity must lie in (0, 2], got {self.proximity}")
        if not 0 < self.failure_prob < 0.5:
            raise ValueError(f"failure_prob must lie in (0, 1/2), got {self.failure_prob}")
        object.__setattr__(self, "known", arr)

    @property
    def support_size(self) -> int:
        return len(self.known)


@dataclass(frozen=True)
class SampleBatch:
    """Histogram of raw samples over support indices."""

    counts: np.ndarray
    total: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        if int(counts.sum()) != self.total:
            raise ValueError("counts must sum to total")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_counts(cls, counts) -> "SampleBatch":
        counts = np.asarray(counts, dtype=np.int64)
        return cls(counts=counts, total=int(counts.sum()))

    @classmethod
    def from_samples(cls, indices, support_size: int) -> "SampleBatch":
        counts = np.bincount(np.asarray(indices, dtype=np.int64), minlength=support_size)
        return cls(counts=counts, total=int(counts.sum()))


def required_samples_worst(inst: L1TestInstance, constant: float = DEFAULT_SAMPLE_CONSTANT) -> int:
    """ceil(c * sqrt(m) / eps1^2 * ln(1/delta))."""
    m = inst.support_size
    return math.ceil(
        constant * math.sqrt(m) / inst.proximity**2 * math.log(1.0 / inst.failure_prob)
    )


def required_samples_instance(inst: L1TestInstance, constant: float = DEFAULT_SAMPLE_CONSTANT) -> int:
    """ceil(c * max(1/eps1, ||p^{-max}_{-eps1/16}||_{2/3} / eps1^2) * ln(1/delta))."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationExhausted)
        norm = quasinorm_two_thirds(
            truncate_minus_max_minus_eps(inst.known, inst.proximity / 16.0)
        )
    core = max(1.0 / inst.proximity, norm / inst.proximity**2)
    return math.ceil(constant * core * math.log(1.0 / inst.failure_prob))


# -- statistic ----------------------------------------------------------------

_STAT_VERSION = 1


def _split_masks(p: np.ndarray, eps1: float) -> tuple[np.ndarray, np.ndarray]:
    """(retained S, tail bucket B) masks; the max entry is in neither."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationExhausted)
        trunc = truncate_minus_max_minus_eps(p, eps1 / 16.0)
    retained = trunc > 0
    bucket = ~retained
    bucket[int(np.argmax(p))] = False
    return retained, bucket


def _statistics(
    p: np.ndarray, eps1: float, counts: np.ndarray, total: int
) -> tuple[float, float]:
    retained, bucket = _split_masks(p, eps1)
    chi = 0.0
    if retained.any():
        ps = p[retained]
        xs = counts[retained].astype(float)
        chi = float((((xs - total * ps) ** 2 - xs) / ps ** (2.0 / 3.0)).sum())
    tail = 0.0
    if bucket.any():
        tail = abs(float(counts[bucket].sum()) - total * math.fsum(p[bucket]))
    return chi, tail


def _statistics_batch(
    p: np.ndarray, eps1: float, counts_matrix: np.ndarray, total: int
) -> tuple[np.ndarray, np.ndarray]:
    retained, bucket = _split_masks(p, eps1)
    n_sims = counts_matrix.shape[0]
    chi = np.zeros(n_sims)
    if retained.any():
        ps = p[retained]
        xs = counts_matrix[:, retained].astype(float)
        chi = (((xs - total * ps) ** 2 - xs) / ps ** (2.0 / 3.0)).sum(axis=1)
    tail = np.zeros(n_sims)
    if bucket.any():
        tail = np.abs(counts_matrix[:, bucket].sum(axis=1) - total * math.fsum(p[bucket]))
    return chi, tail


# -- calibration --------------------------------------------------------------


@dataclass(frozen=True)
class Thresholds:
    chi: float
    bucket: float
    n_cal: int


def _default_n_cal(delta: float) -> int:
    return min(20000, max(1200, math.ceil(48.0 / delta)))


def _cache_key(profile: np.ndarray, eps1: float, delta: float, total: int, n_cal: int) -> str:
    h = hashlib.sha256()
    h.update(f"stat-v{_STAT_VERSION}|{eps1.hex()}|{delta.hex()}|{total}|{n_cal}|".encode())
    h.update(b"|".join(x.hex().encode() for x in profile.tolist()))
    return h.hexdigest()


def _calibrate(profile: np.ndarray, eps1: float, delta: float, total: int, n_cal: int) -> Thresholds:
    """Null-quantile thresholds from Monte Carlo draws of multinomial(total, p)."""
    seed = int.from_bytes(
        hashlib.sha256(_cache_key(profile, eps1, delta, total, n_cal).encode()).digest()[:8],
        "big",
    )
    rng = np.random.default_rng(seed)
    pvals = profile / profile.sum()
    sims = rng.multinomial(total, pvals, size=n_cal)
    chi, tail = _statistics_batch(profile, eps1, sims, total)
    # order statistic at the 1 - delta/2 level per statistic (union bound)
    k = min(n_cal - 1, math.ceil((n_cal + 1) * (1.0 - delta / 2.0)) - 1)
    chi_thr = float(np.sort(chi)[k])
    tail_thr = float(np.sort(tail)[k])
    return Thresholds(chi=chi_thr, bucket=tail_thr, n_cal=n_cal)


class CalibrationCache:
    """Thread-safe threshold cache keyed by a content hash of the instance.

    Keys depend on the reference only through its sorted mass profile, so
    relabeled supports share entries.  Optionally persists to a JSON file.
    """

    def __init__(self, path: Optional[str | Path] = None):
        self._lock = threading.Lock()
        self._mem: dict[str, Thresholds] = {}
        self._path = Path(path) if path is not None else None
        if self._path is not None and self._path.exists():
            data = json.loads(self._path.read_text())
            for key, row in data.get("entries", {}).items():
                self._mem[key] = Thresholds(**row)

    def thresholds_for(
        self,
        p,
        eps1: float,
        delta: float,
        total: int,
        *,
        n_cal: Optional[int] = None,
        force: bool = False,
    ) -> Thresholds:
        profile = np.sort(np.asarray(p, dtype=float))[::-1]
        n_cal = n_cal if n_cal is not None else _default_n_cal(delta)
        key = _cache_key(profile, float(eps1), float(delta), int(total), n_cal)
        with self._lock:
            if not force and key in self._mem:
                return self._mem[key]
        thr = _calibrate(profile, float(eps1), float(delta), int(total), n_cal)
        with self._lock:
            self._mem[key] = thr
            if self._path is not None:
                self._save_locked()
        return thr

    def _save_locked(self) -> None:
        payload = {
            "schema_version": 1,
            "entries": {k: vars(t) for k, t in self._mem.items()},
        }
        tmp = self._path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload))
        tmp.replace(self._path)

    def __len__(self) -> int:
        with self._lock:
            return len(self._mem)


_SHARED_CACHE = CalibrationCache()


def decide_l1(
    inst: L1TestInstance,
    samples: SampleBatch,
    *,
    cache: Optional[CalibrationCache] = None,
    n_cal: Optional[int] = None,
) -> Verdict:
    """Threshold decision at the batch's own size; no budget precondition."""
    if len(samples.counts) != inst.support_size:
        raise ValueError("sample histogram length does not match the support")
    cache = cache if cache is not None else _SHARED_CACHE
    thr = cache.thresholds_for(
        inst.known, inst.proximity, inst.failure_prob, samples.total, n_cal=n_cal
    )
    chi, tail = _statistics(inst.known, inst.proximity, samples.counts, samples.total)
    return ACCEPT if (chi <= thr.chi and tail <= thr.bucket) else REJECT


def worst_case_l1_test(
    inst: L1TestInstance,
    samples: SampleBatch,
    *,
    cache: Optional[CalibrationCache] = None,
    constant: float = DEFAULT_SAMPLE_CONSTANT,
    enforce_budget: bool = True,
) -> Verdict:
    """Identity test with the worst-case sample budget sqrt(m)/eps1^2."""
    if enforce_budget and samples.total < required_samples_worst(inst, constant):
        raise InsufficientSamples(
            f"need {required_samples_worst(inst, constant)} samples, got {samples.total}"
        )
    return decide_l1(inst, samples, cache=cache)


def instance_optimal_l1_test(
    inst: L1TestInstance,
    samples: SampleBatch,
    *,
    cache: Optional[CalibrationCache] = None,
    constant: float = DEFAULT_SAMPLE_CONSTANT,
    enforce_budget: bool = True,
) -> Verdict:
    """Identity test with the instance budget driven by the truncated quasinorm."""
    if enforce_budget and samples.total < required_samples_instance(inst, constant):
        raise InsufficientSamples(
            f"need {required_samples_instance(inst, constant)} samples, got {samples.total}"
        )
    return decide_l1(inst, samples, cache=cache)


TesterFn = Callable[[L1TestInstance, SampleBatch], Verdict]


def amplify_median(tester: TesterFn, k: int):
    """Majority vote of k independent runs on disjoint slices of the batch.

    k must be odd.  Slices are drawn without replacement from the histogram
    (multivariate hypergeometric), sizes as equal as possible.  Per the
    standard Chernoff argument the amplified failure probability decays as
    exp(-k/12) when the base tester fails with probability at most 1/3.
    k = 1 returns the base behavior unchanged.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"k must be odd and positive, got {k}")

    def amplified(
        inst: L1TestInstance,
        samples: SampleBatch,
        rng: Optional[np.random.Generator] = None,
    ) -> Verdict:
        if k == 1:
            return tester(inst, samples)
        rng = rng if rng is not None else np.random.default_rng()
        sizes = [samples.total // k] * k
        for j in range(samples.total % k):
            sizes[j] += 1
        remaining = samples.counts.copy()
        accepts = 0
        for size in sizes:
            draw = rng.multivariate_hypergeometric(remaining, size)
            remaining -= draw
            if tester(inst, SampleBatch.from_counts(draw)) == ACCEPT:
                accepts += 1
        return ACCEPT if accepts > k // 2 else REJECT

    return amplified
