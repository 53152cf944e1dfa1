"""Rank-sum significance testing and summary statistics.

The Mann-Whitney U statistic is computed from midranks. For small tie-free
samples (n_x + n_y <= 12) the one-sided p-value is exact, from a counting
recurrence over all rank assignments; otherwise a normal approximation with
continuity and tie corrections is used. Two samples with every value
identical are degenerate: p = 1 with a flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .nn import ConfigurationError

EXACT_LIMIT = 12


@dataclass(frozen=True)
class RankSumResult:
    u_statistic: float
    p_value: float
    alternative: str
    n_x: int
    n_y: int
    method: str  # exact | normal | degenerate
    degenerate: bool


def midranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with tie groups sharing their average rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    i = 0
    sorted_v = values[order]
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@lru_cache(maxsize=None)
def _count_u(u: int, n_x: int, n_y: int) -> int:
    """Number of rank assignments of n_x+n_y distinct values with U_x = u."""
    if u < 0:
        return 0
    if n_x == 0 or n_y == 0:
        return 1 if u == 0 else 0
    return _count_u(u - n_y, n_x - 1, n_y) + _count_u(u, n_x, n_y - 1)


def _exact_cdf(u: int, n_x: int, n_y: int) -> float:
    total = math.comb(n_x + n_y, n_x)
    return sum(_count_u(v, n_x, n_y) for v in range(u + 1)) / total


def mann_whitney_u(x, y, alternative: str) -> RankSumResult:
    """One-sided rank-sum test of sample x against sample y.

    alternative="less" tests whether x tends below y (small U_x),
    "greater" the reverse. p-values are P(U <= u) and P(U >= u) under the
    null, inclusive at the observed statistic.
    """
    if alternative not in ("less", "greater"):
        raise ConfigurationError(f"alternative must be less or greater, got {alternative!r}")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n_x, n_y = x.size, y.size
    if n_x < 1 or n_y < 1:
        raise ConfigurationError("both samples must be non-empty")
    combined = np.concatenate([x, y])
    if not np.all(np.isfinite(combined)):
        raise ConfigurationError("samples contain non-finite values")
    ranks = midranks(combined)
    u_x = float(np.sum(ranks[:n_x]) - n_x * (n_x + 1) / 2.0)

    if np.all(combined == combined[0]):
        return RankSumResult(u_x, 1.0, alternative, n_x, n_y, "degenerate", True)

    _, tie_counts = np.unique(combined, return_counts=True)
    tie_free = bool(np.all(tie_counts == 1))
    if tie_free and n_x + n_y <= EXACT_LIMIT:
        u_int = int(round(u_x))
        if alternative == "less":
            p = _exact_cdf(u_int, n_x, n_y)
        else:
            p = 1.0 - (_exact_cdf(u_int - 1, n_x, n_y) if u_int > 0 else 0.0)
        return RankSumResult(u_x, min(max(p, 0.0), 1.0), alternative, n_x, n_y, "exact", False)

    n = n_x + n_y
    mean_u = n_x * n_y / 2.0
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (n * (n - 1))
    var_u = n_x * n_y / 12.0 * ((n + 1) - tie_term)
    if var_u <= 0.0:
        return RankSumResult(u_x, 1.0, alternative, n_x, n_y, "degenerate", True)
    sd = math.sqrt(var_u)
    if alternative == "less":
        z = (u_x + 0.5 - mean_u) / sd
        p = 0.5 * math.erfc(-z / math.sqrt(2.0))
    else:
        z = (u_x - 0.5 - mean_u) / sd
        p = 0.5 * math.erfc(z / math.sqrt(2.0))
    return RankSumResult(u_x, min(max(p, 0.0), 1.0), alternative, n_x, n_y, "normal", False)


def summarize_values(values, quantiles=(0.25, 0.5, 0.75)) -> dict:
    """Mean, population SD, and the requested quantiles of one metric."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ConfigurationError("cannot summarize an empty sample")
    q1, median, q3 = (float(v) for v in np.quantile(values, quantiles))
    return {
        "mean": float(np.mean(values)),
        "sd": float(np.std(values)),
        "median": median,
        "q1": q1,
        "q3": q3,
        "n": int(values.size),
    }
