"""Small numeric helpers used across modules."""
from __future__ import annotations

import math

import numpy as np


def floor_log2(x: float) -> int:
    """Exact floor(log2(x)) for positive finite x, no float-log rounding."""
    if x <= 0 or not math.isfinite(x):
        raise ValueError(f"floor_log2 requires positive finite x, got {x}")
    m, e = math.frexp(x)  # x = m * 2**e with 0.5 <= m < 1
    return e - 1


def ceil_log2(x: float) -> int:
    """Exact ceil(log2(x)) for positive finite x."""
    if x <= 0 or not math.isfinite(x):
        raise ValueError(f"ceil_log2 requires positive finite x, got {x}")
    m, e = math.frexp(x)
    return e - 1 if m == 0.5 else e


def fsum_where(values: np.ndarray, mask: np.ndarray) -> float:
    """Correctly rounded sum of values[mask].

    Correct rounding makes subset sums monotone: a subset of nonnegative
    values never sums above its superset, which ordinary left-to-right
    float addition does not guarantee across different index orders.
    """
    return math.fsum(values[mask])


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score confidence interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials))
    return max(0.0, center - half), min(1.0, center + half)
