"""Poisson null model, goodness-of-fit diagnostics and Monte Carlo tests."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from cubetop import summaries
from cubetop.detect import Detector
from cubetop.imagio import ImageStack, RegionError, RegionSpec

POISSON_TAIL = 1e-12


# ------------------------------------------------------------------ null model


@dataclass(frozen=True)
class NullModel:
    """Pure-noise pixel distribution for summed frames.

    ``poisson`` draws i.i.d. Poisson(``m * lam``) pixels; ``empirical`` draws
    uniformly with replacement from ``pool`` (already summed over ``m`` frames).
    """

    kind: str
    lam: float = 0.0
    m: int = 1
    pool: np.ndarray | None = field(default=None, repr=False)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind == "poisson":
            if not self.lam >= 0 or not math.isfinite(self.lam):
                raise ValueError("poisson null needs a finite lam >= 0")
        elif self.kind == "empirical":
            if self.pool is None or np.asarray(self.pool).size == 0:
                raise ValueError("empirical null needs a non-empty pool")
        else:
            raise ValueError(f"unknown null model kind {self.kind!r}")
        if self.m < 1:
            raise ValueError("m must be >= 1")

    @property
    def rate(self) -> float:
        return self.m * self.lam

    def rng(self, replicate: int) -> np.random.Generator:
        """Independent counter-based stream for one replicate."""
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, replicate])))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "m": self.m, "seed": self.seed}
        if self.kind == "poisson":
            out["lambda"] = self.lam
        else:
            out["pool_size"] = int(np.asarray(self.pool).size)
        return out


def generate_null_image(model: NullModel, shape: tuple[int, int], replicate: int) -> np.ndarray:
    """One pure-noise image, a deterministic function of ``(model.seed, replicate)``."""
    rng = model.rng(replicate)
    if model.kind == "poisson":
        return rng.poisson(model.rate, size=shape)
    pool = np.asarray(model.pool)
    return pool[rng.integers(0, pool.size, size=shape)]


def empirical_pool(stack: ImageStack, U: RegionSpec, m: int = 1) -> np.ndarray:
    """Vacuum pixels of the non-overlapping summed frames starting at 0, m, 2m, ..."""
    x0, y0, x1, y1 = U.check_rect((stack.height, stack.width))
    usable = (stack.frame_count // m) * m
    if usable == 0:
        raise ValueError("stack shorter than one window")
    block = stack.frames[:usable, y0:y1, x0:x1].astype(np.int64)
    summed = block.reshape(usable // m, m, y1 - y0, x1 - x0).sum(axis=1)
    return summed.ravel()


def fit_lambda(stack: ImageStack, U: RegionSpec) -> float:
    """Maximum-likelihood Poisson rate: the grand mean of vacuum pixels over all frames."""
    x0, y0, x1, y1 = U.check_rect((stack.height, stack.width))
    block = stack.frames[:, y0:y1, x0:x1]
    if block.size == 0:
        raise RegionError("empty vacuum region")
    return float(block.mean(dtype=np.float64))


# ------------------------------------------------------------------------ DKW


@dataclass(frozen=True)
class DKWResult:
    ks_distance: float
    p_value: float
    sample_size: int


def poisson_ks_distance(sample: np.ndarray, lam: float) -> float:
    """``sup_k |F_sample(k) - F_Poisson(k)|`` over nonnegative integers ``k``."""
    sample = np.asarray(sample).ravel()
    if sample.size == 0:
        raise ValueError("empty sample")
    if np.any(sample < 0) or np.any(sample != np.floor(sample)):
        raise ValueError("sample must hold nonnegative integers")
    sample = sample.astype(np.int64)
    top = int(sample.max())
    if lam > 0:
        top = max(top, int(sps.poisson.ppf(1 - POISSON_TAIL, lam)) + 1)
    ks = np.arange(top + 1)
    emp = np.cumsum(np.bincount(sample, minlength=top + 1)) / sample.size
    model = sps.poisson.cdf(ks, lam) if lam > 0 else np.ones(top + 1)
    return float(np.max(np.abs(emp - model)))


def dkw_pvalue(ks_distance: float, sample_size: float) -> float:
    """``min(1, 2 exp(-2 n ks^2))``."""
    if sample_size < 1:
        raise ValueError("sample size must be >= 1")
    return min(1.0, 2.0 * math.exp(-2.0 * sample_size * ks_distance**2))


def dkw_test(sample: np.ndarray, lam: float, sample_size: float | None = None) -> DKWResult:
    """KS distance of an integer sample from Poisson(``lam``) and its DKW p-value.

    ``sample_size`` defaults to the number of observations; pass it explicitly
    to use a different effective size.
    """
    sample = np.asarray(sample)
    n = sample.size if sample_size is None else sample_size
    ks = poisson_ks_distance(sample, lam)
    return DKWResult(ks, dkw_pvalue(ks, n), int(n))


# ------------------------------------------------------------ Monte Carlo test


def ci_halfwidth(alpha: float, n: int) -> float:
    """Half-width ``sqrt(-ln(alpha/2) / (2n)) + 1/n`` of the p-value interval."""
    if not 0 < alpha < 1 or n < 1:
        raise ValueError("need 0 < alpha < 1 and n >= 1")
    return math.sqrt(-math.log(alpha / 2) / (2 * n)) + 1.0 / n


@dataclass(frozen=True)
class TestReport:
    __test__ = False

    statistic: str
    observed: float
    p_value: float
    n: int
    alpha: float
    ci_halfwidth: float
    ci: tuple[float, float]
    seed: int | None = None
    undefined_replicates: int = 0

    def to_dict(self) -> dict:
        observed = self.observed if math.isfinite(self.observed) else None
        return {
            "statistic": self.statistic,
            "observed": observed,
            "p_value": self.p_value,
            "n": self.n,
            "alpha": self.alpha,
            "ci": list(self.ci),
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _defined(values) -> np.ndarray:
    # undefined statistics can never reach a defined observation
    v = np.asarray(values, dtype=np.float64)
    return np.where(np.isnan(v), -np.inf, v)


def mc_pvalue(
    observed: float,
    null_samples: Sequence[float],
    alpha: float = 0.05,
    statistic: str = "",
    seed: int | None = None,
) -> TestReport:
    """Monte Carlo p-value ``(1 + #{T_i >= t}) / (n + 1)`` with its confidence interval.

    ``nan`` entries (undefined statistics) are treated as ``-inf``.
    """
    null = _defined(null_samples)
    n = null.size
    if n < 1:
        raise ValueError("need at least one null sample")
    t = float(_defined([observed])[0])
    p = (1 + int(np.count_nonzero(null >= t))) / (n + 1)
    q = ci_halfwidth(alpha, n)
    return TestReport(
        statistic=statistic,
        observed=t,
        p_value=p,
        n=n,
        alpha=alpha,
        ci_halfwidth=q,
        ci=(max(0.0, p - q), min(1.0, p + q)),
        seed=seed,
        undefined_replicates=int(np.count_nonzero(np.isinf(null) & (null < 0))),
    )


def null_detector(detector: Detector) -> Detector:
    """The same pipeline expressed on a generated subimage (no rect, shifted polygon)."""
    region = detector.region
    if region.rect is not None and region.polygon is not None:
        region = region.shifted(-region.rect[0], -region.rect[1])
    elif region.rect is not None:
        region = RegionSpec()
    return Detector(region, detector.sigma, detector.eta, "max_pixel_value")


def subimage_shape(detector: Detector, frame_shape: tuple[int, int]) -> tuple[int, int]:
    if detector.region.rect is None:
        return frame_shape
    x0, y0, x1, y1 = detector.region.check_rect(frame_shape)
    return (y1 - y0, x1 - x0)


def null_statistics(
    model: NullModel,
    detector: Detector,
    statistic: str | Sequence[str],
    n: int,
    shape: tuple[int, int],
    threads: int = 1,
) -> np.ndarray:
    """Statistic(s) of ``n`` null replicates, ordered by replicate index.

    Returns shape ``(n,)`` for one statistic name, ``(n, k)`` for a list.
    """
    names = [statistic] if isinstance(statistic, str) else list(statistic)
    det = null_detector(detector)

    def one(replicate: int) -> list[float]:
        image = generate_null_image(model, shape, replicate)
        lifetimes = det.lifetimes(image)
        return [summaries.evaluate(name, lifetimes) for name in names]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(n)))
    else:
        rows = [one(i) for i in range(n)]
    out = np.array(rows, dtype=np.float64).reshape(n, len(names))
    return out[:, 0] if isinstance(statistic, str) else out


def gof_test(
    frame: np.ndarray,
    detector: Detector,
    statistic: str,
    model: NullModel,
    n: int,
    alpha: float = 0.05,
    threads: int = 1,
) -> TestReport:
    """Monte Carlo goodness-of-fit test of ``frame`` against the noise model.

    The observed frame and every null replicate go through the same detector
    (essential class resolved to the subimage maximum); large statistic values
    are evidence against the null.
    """
    if detector.infinite_mode != "max_pixel_value":
        detector = Detector(detector.region, detector.sigma, detector.eta, "max_pixel_value")
    observed = summaries.evaluate(statistic, detector.lifetimes(frame))
    shape = subimage_shape(detector, np.shape(frame))
    null = null_statistics(model, detector, statistic, n, shape, threads)
    return mc_pvalue(observed, null, alpha, statistic=statistic, seed=model.seed)


# --------------------------------------------------------------- diagnostics


@dataclass(frozen=True)
class Autocorrelation:
    lags: np.ndarray
    mean_rho: np.ndarray
    null_sd: float
    excluded: int


def mean_autocorrelation(
    stack: ImageStack, U: RegionSpec, max_lag: int, chunk: int = 8192
) -> Autocorrelation:
    """Per-pixel temporal autocorrelation (biased, 1/N) averaged over the vacuum.

    Pixels whose series is constant are excluded and counted.
    """
    N = stack.frame_count
    if not 1 <= max_lag < N:
        raise ValueError(f"max_lag must be in [1, {N - 1}]")
    x0, y0, x1, y1 = U.check_rect((stack.height, stack.width))
    block = stack.frames[:, y0:y1, x0:x1].reshape(N, -1)
    npix = block.shape[1]
    sums = np.zeros(max_lag)
    used = 0
    for start in range(0, npix, chunk):
        x = block[:, start : start + chunk].astype(np.float64)
        x -= x.mean(axis=0)
        denom = np.einsum("ij,ij->j", x, x)
        ok = denom > 0
        x = x[:, ok]
        denom = denom[ok]
        used += int(ok.sum())
        for h in range(1, max_lag + 1):
            num = np.einsum("ij,ij->j", x[:-h], x[h:])
            sums[h - 1] += float(np.sum(num / denom))
    mean = sums / used if used else np.full(max_lag, np.nan)
    return Autocorrelation(
        np.arange(1, max_lag + 1), mean, 1.0 / math.sqrt(npix * N), npix - used
    )


@dataclass(frozen=True)
class Semivariogram:
    bins: np.ndarray
    gamma: np.ndarray
    pair_counts: np.ndarray

    def defined(self) -> dict[int, float]:
        return {int(l): float(g) for l, g, c in zip(self.bins, self.gamma, self.pair_counts) if c}


def semivariogram(frame: np.ndarray, U: RegionSpec, bins: int = 15) -> Semivariogram:
    """Binned empirical semivariogram over distinct pixel pairs in the rect ``U``.

    Bin ``l`` holds pairs at distance in ``[4l/3, 4l/3 + 4/3)``; empty bins get
    ``nan`` and a zero count.
    """
    frame = np.asarray(frame)
    x0, y0, x1, y1 = U.check_rect(frame.shape)
    a = frame[y0:y1, x0:x1].astype(np.float64)
    h, w = a.shape
    sq = np.zeros(bins)
    counts = np.zeros(bins, dtype=np.int64)
    reach = int(math.ceil(4 * bins / 3))
    for dy in range(0, min(reach, h - 1) + 1):
        for dx in range(-min(reach, w - 1), min(reach, w - 1) + 1):
            if dy == 0 and dx <= 0:
                continue
            d2 = dx * dx + dy * dy
            # l = floor(3d/4), in exact integer arithmetic
            l = math.isqrt(9 * d2) // 4
            if l >= bins:
                continue
            if dx >= 0:
                p, q = a[: h - dy, : w - dx], a[dy:, dx:]
            else:
                p, q = a[: h - dy, -dx:], a[dy:, : w + dx]
            diff = p - q
            sq[l] += float(np.sum(diff * diff))
            counts[l] += diff.size
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(counts > 0, sq / (2 * counts), np.nan)
    return Semivariogram(np.arange(bins), gamma, counts)


# ---------------------------------------------------------- multiple testing


def harmonic(N: int) -> float:
    return float(sum(1.0 / k for k in range(1, N + 1)))


@dataclass(frozen=True)
class MultiTestRow:
    k: int
    index: int
    p_value: float
    rank: int
    threshold: float
    rejected: bool


@dataclass(frozen=True)
class MultiTestReport:
    rows: list[MultiTestRow]
    alpha: float
    N: int
    C_N: float
    ell: int

    @property
    def rejected(self) -> np.ndarray:
        return np.array([r.rejected for r in self.rows], dtype=bool)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "index", "p_value", "rank", "threshold", "rejected"])
        for r in self.rows:
            writer.writerow(
                [r.k, r.index, repr(r.p_value), r.rank, repr(r.threshold), int(r.rejected)]
            )
        return buf.getvalue()


def multi_test(
    p_values: Sequence[float], alpha: float = 0.05, indices: Sequence[int] | None = None
) -> MultiTestReport:
    """Step-up false-discovery control valid under arbitrary dependence.

    Rejects the ``ell`` smallest p-values, ``ell`` being the largest ``k`` with
    ``p_(k) <= k alpha / (N C_N)`` and ``C_N = sum_{j<=N} 1/j``. Ties are
    ranked by position.
    """
    p = np.asarray(p_values, dtype=np.float64)
    N = p.size
    if N < 1:
        raise ValueError("need at least one hypothesis")
    if indices is None:
        indices = list(range(N))
    c_n = harmonic(N)
    order = np.lexsort((np.arange(N), p))
    ranks = np.empty(N, dtype=np.int64)
    ranks[order] = np.arange(1, N + 1)
    thresholds = ranks * alpha / (N * c_n)
    below = p[order] <= np.arange(1, N + 1) * alpha / (N * c_n)
    ell = int(np.nonzero(below)[0].max()) + 1 if below.any() else 0
    rows = [
        MultiTestRow(k, int(indices[k]), float(p[k]), int(ranks[k]), float(thresholds[k]), bool(ranks[k] <= ell))
        for k in range(N)
    ]
    return MultiTestReport(rows, alpha, N, c_n, ell)


def shared_pool_pvalues(observed: Sequence[float], null_pool: Sequence[float]) -> np.ndarray:
    """Monte Carlo p-values of every observation against one shared null pool."""
    pool = np.sort(_defined(null_pool))
    t = _defined(observed)
    n = pool.size
    at_least = n - np.searchsorted(pool, t, side="left")
    return (1 + at_least) / (n + 1)


def multi_test_from_statistics(
    observed: Sequence[float],
    null_pool: Sequence[float],
    alpha: float = 0.05,
    indices: Sequence[int] | None = None,
) -> MultiTestReport:
    return multi_test(shared_pool_pvalues(observed, null_pool), alpha, indices)
