"""Kruskal-Wallis with chi-square p-values and a paired bootstrap post-hoc."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import InputError, derive_rng

ALPHA = 0.05

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _gamma_p_series(a: float, x: float) -> float:
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_n x^n / ((a+1)...(a+n))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(a * math.log(x) - x - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(a * math.log(x) - x - math.lgamma(a))


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x)."""
    if a <= 0:
        raise InputError(f"shape must be positive, got {a}")
    if x < 0:
        raise InputError(f"x must be non-negative, got {x}")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_contfrac(a, x)


def chi2_sf(x: float, df: int) -> float:
    """Upper-tail probability of the chi-square distribution."""
    if df < 1:
        raise InputError(f"df must be >= 1, got {df}")
    if x < 0 or math.isnan(x):
        raise InputError(f"chi-square statistic must be >= 0, got {x}")
    return min(1.0, max(0.0, gamma_q(0.5 * df, 0.5 * x)))


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def kruskal_wallis(groups: Sequence[Sequence[float]]):
    """Tie-corrected Kruskal-Wallis H with its chi-square approximation.

    Returns ``(H, df, p)``.  If every pooled value is tied the statistic is
    undefined; ``(0.0, k - 1, 1.0)`` is returned.
    """
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(groups) < 2:
        raise InputError(f"need at least 2 groups, got {len(groups)}")
    for i, g in enumerate(groups):
        if g.size == 0:
            raise InputError(f"group {i} is empty")
        if not np.all(np.isfinite(g)):
            raise InputError(f"group {i} has non-finite values")
    pooled = np.concatenate(groups)
    n = pooled.size
    ranks = midranks(pooled)
    bounds = np.cumsum([0] + [g.size for g in groups])
    h = sum(
        ranks[bounds[i] : bounds[i + 1]].sum() ** 2 / groups[i].size
        for i in range(len(groups))
    )
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    _, ties = np.unique(pooled, return_counts=True)
    correction = 1.0 - float(np.sum(ties.astype(float) ** 3 - ties)) / (n**3 - n)
    df = len(groups) - 1
    if correction <= 0:
        return 0.0, df, 1.0
    h = max(h / correction, 0.0)
    return h, df, chi2_sf(h, df)


def bootstrap_paired(a, b, n_resamples: int, rng: np.random.Generator) -> float:
    """Two-sided paired percentile bootstrap p-value for mean(a - b) = 0.

    The per-pair differences are resampled with replacement; with ``lo`` and
    ``hi`` the counts of resampled means <= 0 and >= 0,
    ``p = min(1, 2 * min(lo + 1, hi + 1) / (B + 1))``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError(f"paired samples must have equal length, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise InputError("need at least 2 pairs")
    if n_resamples < 100:
        raise InputError(f"need at least 100 resamples, got {n_resamples}")
    d = a - b
    idx = rng.integers(0, d.size, size=(n_resamples, d.size))
    means = d[idx].mean(axis=1)
    lo = int(np.count_nonzero(means <= 0))
    hi = int(np.count_nonzero(means >= 0))
    return min(1.0, 2.0 * min(lo + 1, hi + 1) / (n_resamples + 1))


def summarize(values):
    """Arithmetic mean and sample (n - 1) standard deviation."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise InputError(f"need at least 2 values, got {v.size}")
    return float(v.mean()), float(v.std(ddof=1))


@dataclass(frozen=True)
class StatsReport:
    h: float
    df: int
    p: float
    names: tuple
    means: tuple
    stds: tuple
    pairwise_p: np.ndarray
    n_resamples: int
    seed: int
    alpha: float = ALPHA

    @property
    def significant(self) -> bool:
        return self.p < self.alpha


def compare_groups(groups, names=None, n_resamples: int = 10000, seed: int = 0) -> StatsReport:
    """Kruskal-Wallis across all groups plus bootstrap p for every pair.

    Pair ``(i, j)`` with ``i < j`` uses stream ``bootstrap-{i}-{j}``.
    """
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if names is None:
        names = [f"group{i}" for i in range(len(groups))]
    h, df, p = kruskal_wallis(groups)
    summaries = [summarize(g) for g in groups]
    k = len(groups)
    pairwise = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            pij = bootstrap_paired(
                groups[i], groups[j], n_resamples, derive_rng(seed, f"bootstrap-{i}-{j}")
            )
            pairwise[i, j] = pairwise[j, i] = pij
    return StatsReport(
        h=h, df=df, p=p, names=tuple(names),
        means=tuple(m for m, _ in summaries), stds=tuple(s for _, s in summaries),
        pairwise_p=pairwise, n_resamples=n_resamples, seed=int(seed),
    )
