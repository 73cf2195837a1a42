"""Real-valued summaries of lifetime multisets.

All functions take any 1D sequence of finite, nonnegative lifetimes. Natural
logarithms throughout. Functions that are undefined on their input raise
:class:`UndefinedStatistic`.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import xlogy


class UndefinedStatistic(ValueError):
    """The summary has no value for this lifetime multiset (e.g. it is empty)."""


def lifetime_vector(lifetimes: Sequence[float] | np.ndarray) -> np.ndarray:
    """Sorted copy of ``lifetimes`` as float64, validating finiteness and sign."""
    v = np.sort(np.asarray(lifetimes, dtype=np.float64).ravel())
    if not np.all(np.isfinite(v)):
        raise ValueError("lifetimes must be finite; resolve infinite pairs first")
    if v.size and v[0] < 0:
        raise ValueError("lifetimes must be nonnegative")
    return v


def _require(v: np.ndarray, k: int, name: str) -> None:
    if v.size < k:
        raise UndefinedStatistic(f"{name} needs at least {k} lifetime(s), got {v.size}")


def persistent_entropy(lifetimes) -> float:
    """Negated persistent entropy ``sum (l/L) ln(l/L)``, always ``<= 0``.

    Zero lifetimes contribute nothing but stay in the multiset.
    """
    v = lifetime_vector(lifetimes)
    _require(v, 1, "persistent entropy")
    total = v.sum()
    if total <= 0:
        raise UndefinedStatistic("persistent entropy undefined when all lifetimes are zero")
    # xlogy gives 0 ln 0 = 0, which also covers ratios that underflow to zero
    q = v / total
    return float(np.sum(xlogy(q, q)))


def alps(lifetimes) -> float:
    """ALPS statistic, the integral of ``ln U(eta)`` over ``eta >= 0`` where
    ``U(eta)`` counts lifetimes above ``eta``.

    Evaluated in closed form as ``-sum_{i<K} l_(i) ln(1 - 1/(K-i+1))``, which
    never touches the largest lifetime.
    """
    v = lifetime_vector(lifetimes)
    _require(v, 1, "ALPS")
    K = v.size
    if K == 1:
        return 0.0
    i = np.arange(1, K)
    # ln(1 - 1/(K-i+1)) = ln((K-i)/(K-i+1))
    return float(-np.sum(v[:-1] * (np.log(K - i) - np.log(K - i + 1))))


def longest_barcode(lifetimes) -> float:
    v = lifetime_vector(lifetimes)
    _require(v, 1, "longest barcode")
    return float(v[-1])


def mean_persistence(lifetimes) -> float:
    v = lifetime_vector(lifetimes)
    _require(v, 1, "mean persistence")
    return float(v.mean())


def lifetime_power_sum(lifetimes, k: int) -> float:
    """``sum l**k``; zero for an empty multiset."""
    if k < 1:
        raise ValueError("k must be >= 1")
    v = lifetime_vector(lifetimes)
    return float(np.sum(v**k))


def central_moment(lifetimes, k: int) -> float:
    """Population central moment ``(1/K) sum (l - mean)**k``."""
    v = lifetime_vector(lifetimes)
    _require(v, 1, "central moment")
    return float(np.mean((v - v.mean()) ** k))


def _spread(v: np.ndarray, name: str) -> float:
    _require(v, 2, name)
    m2 = float(np.mean((v - v.mean()) ** 2))
    if m2 <= 0:
        raise UndefinedStatistic(f"{name} undefined for constant lifetimes")
    return m2


def snr(lifetimes) -> float:
    """Mean lifetime over the population standard deviation."""
    v = lifetime_vector(lifetimes)
    m2 = _spread(v, "SNR")
    return float(v.mean() / math.sqrt(m2))


def skewness(lifetimes) -> float:
    """``M3 / M2**1.5`` with population moments."""
    v = lifetime_vector(lifetimes)
    m2 = _spread(v, "skewness")
    m3 = float(np.mean((v - v.mean()) ** 3))
    return m3 / m2**1.5


def count(lifetimes) -> float:
    return float(np.asarray(lifetimes).size)


STATISTICS: dict[str, Callable[[np.ndarray], float]] = {
    "count": count,
    "entropy": persistent_entropy,
    "longest": longest_barcode,
    "mean": mean_persistence,
    "alps": alps,
    "l1": lambda v: lifetime_power_sum(v, 1),
    "l2": lambda v: lifetime_power_sum(v, 2),
    "snr": snr,
    "skew": skewness,
}


def evaluate(name: str, lifetimes) -> float:
    """Evaluate a statistic by name, returning ``nan`` when it is undefined."""
    try:
        fn = STATISTICS[name]
    except KeyError:
        raise ValueError(f"unknown statistic {name!r}; choose from {sorted(STATISTICS)}") from None
    try:
        return fn(lifetimes)
    except UndefinedStatistic:
        return math.nan
