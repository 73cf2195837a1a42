"""Synthetic noisy frames with known dark peaks, and recovery metrics."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from cubetop.detect import Detector, MarkedPointSet


@dataclass(frozen=True)
class GroundTruthSpec:
    """Dark Gaussian peaks on a flat background.

    The noise-free intensity at pixel ``(x, y)`` is
    ``background - sum_i amplitude_i * exp(-|(x, y) - c_i|^2 / (2 peak_sigma^2))``
    clamped at zero; pixel ``(x, y)`` sits at integer coordinates. Shot noise
    draws Poisson counts with mean ``dose`` times that intensity.
    """

    width: int
    height: int
    centers: tuple[tuple[float, float], ...]
    amplitudes: tuple[float, ...]
    peak_sigma: float
    background: float
    dose: float = 1.0

    def __post_init__(self) -> None:
        centers = tuple((float(x), float(y)) for x, y in self.centers)
        amps = tuple(float(a) for a in np.broadcast_to(self.amplitudes, (len(centers),)))
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "amplitudes", amps)
        if self.width < 1 or self.height < 1:
            raise ValueError("frame dimensions must be positive")
        if any(a <= 0 for a in amps):
            raise ValueError("amplitudes must be positive")
        if self.dose <= 0 or self.peak_sigma <= 0 or self.background < 0:
            raise ValueError("dose and peak_sigma must be positive, background nonnegative")
        for x, y in centers:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"peak center {(x, y)} outside the frame")

    @classmethod
    def lattice(
        cls,
        rows: int = 5,
        cols: int = 5,
        spacing: float = 16.0,
        margin: float = 16.0,
        amplitudes: Sequence[float] | float = 1.0,
        peak_sigma: float = 3.0,
        background: float = 1.0,
        dose: float = 100.0,
    ) -> "GroundTruthSpec":
        """A ``rows x cols`` grid of peaks, ``spacing`` apart, ``margin`` from the edges."""
        centers = tuple(
            (margin + j * spacing, margin + i * spacing) for i in range(rows) for j in range(cols)
        )
        width = int(math.ceil(2 * margin + (cols - 1) * spacing))
        height = int(math.ceil(2 * margin + (rows - 1) * spacing))
        amps = np.broadcast_to(np.asarray(amplitudes, dtype=float), (len(centers),))
        return cls(width, height, centers, tuple(amps), peak_sigma, background, dose)

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruthSpec":
        data = dict(data)
        data["centers"] = tuple(tuple(c) for c in data["centers"])
        amps = data["amplitudes"]
        data["amplitudes"] = tuple(amps) if isinstance(amps, (list, tuple)) else (amps,) * len(data["centers"])
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "GroundTruthSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["centers"] = [list(c) for c in self.centers]
        out["amplitudes"] = list(self.amplitudes)
        return out

    def bounding_polygon(self, pad: float) -> tuple[tuple[float, float], ...]:
        """Axis-aligned rectangle around the peak centers, grown by ``pad``."""
        xs = [c[0] for c in self.centers]
        ys = [c[1] for c in self.centers]
        x0, x1 = max(min(xs) - pad, 0.0), min(max(xs) + pad + 1, float(self.width))
        y0, y1 = max(min(ys) - pad, 0.0), min(max(ys) + pad + 1, float(self.height))
        return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


def render_truth(spec: GroundTruthSpec) -> np.ndarray:
    """Noise-free intensity (real valued, >= 0)."""
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    img = np.full((spec.height, spec.width), float(spec.background))
    two_s2 = 2.0 * spec.peak_sigma**2
    for (cx, cy), a in zip(spec.centers, spec.amplitudes):
        img -= a * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / two_s2)
    return np.maximum(img, 0.0)


def expected_counts(spec: GroundTruthSpec) -> np.ndarray:
    return spec.dose * render_truth(spec)


def add_shot_noise(truth: np.ndarray, dose: float, rng: np.random.Generator) -> np.ndarray:
    """Independent Poisson counts with mean ``dose * truth`` per pixel."""
    truth = np.asarray(truth, dtype=np.float64)
    if np.any(truth < 0):
        raise ValueError("truth must be nonnegative")
    return rng.poisson(dose * truth).astype(np.int64)


def _as_points(points) -> np.ndarray:
    if isinstance(points, MarkedPointSet):
        return points.points
    arr = np.asarray(points, dtype=np.float64)
    return arr.reshape(-1, 2)


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance between two non-empty point sets."""
    pa, pb = _as_points(a), _as_points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("Hausdorff distance needs non-empty point sets")
    d = cdist(pa, pb)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def greedy_match(a: np.ndarray, b: np.ndarray) -> list[tuple[int, int]]:
    """Pair points of ``a`` and ``b`` in ascending distance order, each used once.

    Distance ties are broken by ``(index in a, index in b)``.
    """
    d = cdist(a, b)
    rows, cols = np.indices(d.shape)
    order = np.lexsort((cols.ravel(), rows.ravel(), d.ravel()))
    ia, ib = np.unravel_index(order, d.shape)
    used_a = np.zeros(len(a), bool)
    used_b = np.zeros(len(b), bool)
    pairs = []
    for i, j in zip(ia.tolist(), ib.tolist()):
        if not used_a[i] and not used_b[j]:
            used_a[i] = used_b[j] = True
            pairs.append((i, j))
            if len(pairs) == min(len(a), len(b)):
                break
    return pairs


def matched_intensity_correlation(a: MarkedPointSet, b: MarkedPointSet) -> float:
    """Pearson correlation of lifetimes over greedily matched locations."""
    if len(a) != len(b):
        raise ValueError(f"size mismatch: {len(a)} vs {len(b)} points")
    if len(a) < 2:
        raise ValueError("correlation needs at least two matched points")
    pairs = greedy_match(a.points, b.points)
    la = np.array([a.lifetimes[i] for i, _ in pairs], dtype=np.float64)
    lb = np.array([b.lifetimes[j] for _, j in pairs], dtype=np.float64)
    if la.std() == 0 or lb.std() == 0:
        raise ValueError("correlation undefined for constant lifetimes")
    return float(np.corrcoef(la, lb)[0, 1])


@dataclass(frozen=True)
class RecoveryRow:
    seed: int
    sigma: float
    count: int
    hausdorff: float
    correlation: float


def recovery(
    spec: GroundTruthSpec,
    detector: Detector,
    seeds: Sequence[int],
) -> tuple[MarkedPointSet, list[RecoveryRow]]:
    """Compare detections on noisy renderings against the noise-free detection.

    Returns the reference detection and one row per seed; metrics that are
    undefined for a seed (no points, mismatched counts) are ``nan``.
    """
    clean = expected_counts(spec)
    reference = detector(clean)
    rows = []
    for seed in seeds:
        found = detector(noisy_frame(spec, seed))
        dh = hausdorff(reference, found) if len(found) and len(reference) else math.nan
        try:
            rho = matched_intensity_correlation(reference, found)
        except ValueError:
            rho = math.nan
        rows.append(RecoveryRow(int(seed), detector.sigma, len(found), dh, rho))
    return reference, rows


def noisy_frame(spec: GroundTruthSpec, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed)])))
    return add_shot_noise(render_truth(spec), spec.dose, rng)
