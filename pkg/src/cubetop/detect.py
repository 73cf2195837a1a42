"""Feature detection from dimension-0 persistence, and PD-based thresholding."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from cubetop.cubical import INFINITE_MODES, PersistenceDiagram, compute_pd0, resolve_infinite
from cubetop.imagio import RegionError, RegionSpec, polygon_mask, smooth

# default lifetime threshold for each calibrated smoothing scale
ETA_BY_SIGMA = {2.0: 1.0, 4.0: 0.4, 6.0: 0.1}


@dataclass
class MarkedPointSet:
    """Detected feature locations ``(x, y)`` in frame coordinates with lifetimes."""

    xs: np.ndarray
    ys: np.ndarray
    lifetimes: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.lifetimes)

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.xs, self.ys]).astype(np.float64)

    def threshold(self, eta: float) -> "MarkedPointSet":
        keep = self.lifetimes > eta
        prov = dict(self.provenance, eta=eta)
        return MarkedPointSet(self.xs[keep], self.ys[keep], self.lifetimes[keep], prov)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x", "y", "lifetime"])
        for x, y, l in zip(self.xs.tolist(), self.ys.tolist(), self.lifetimes.tolist()):
            writer.writerow([x, y, repr(float(l))])
        return buf.getvalue()


@dataclass
class Detector:
    """Detection pipeline with fixed parameters, reusable across frames.

    Frames are cropped to the region's rect (the whole frame when there is no
    rect), smoothed, and reduced to dimension-0 persistence. Pairs whose birth
    pixel lies outside the polygon are dropped, then pairs with lifetime at or
    below ``eta``. With ``eta == 0`` nothing is dropped, zero-persistence
    pairs included.
    """

    region: RegionSpec
    sigma: float = 0.0
    eta: float = 0.0
    infinite_mode: str = "max_pixel_value"
    _mask_cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.infinite_mode not in INFINITE_MODES:
            raise ValueError(f"unknown infinite mode {self.infinite_mode!r}")

    def subimage(self, frame: np.ndarray) -> np.ndarray:
        try:
            return self.region.crop(np.asarray(frame))
        except RegionError as exc:
            raise RegionError(f"R outside frame: {exc}") from exc

    def region_mask(self, shape: tuple[int, int]) -> np.ndarray | None:
        """Polygon membership in subimage coordinates, or ``None`` for all pixels."""
        if self.region.polygon is None:
            return None
        if shape not in self._mask_cache:
            dx, dy = (self.region.rect[0], self.region.rect[1]) if self.region.rect else (0, 0)
            mask = polygon_mask(self.region.shifted(-dx, -dy).polygon, shape)
            if not mask.any():
                raise RegionError("R outside frame: no pixel center inside the polygon")
            self._mask_cache[shape] = mask
        return self._mask_cache[shape]

    def diagram(self, frame: np.ndarray) -> tuple[PersistenceDiagram, np.ndarray]:
        """Resolved dim-0 diagram of the smoothed subimage, and that subimage."""
        sub = smooth(self.subimage(frame), self.sigma)
        # on ties, attribute birth pixels to R where possible
        pd0 = compute_pd0(sub, provenance={"sigma": self.sigma}, tie_priority=self.region_mask(sub.shape))
        if self.infinite_mode == "max_pixel_value":
            pd0 = resolve_infinite(pd0, self.infinite_mode, max_value=float(np.max(sub)))
        else:
            pd0 = resolve_infinite(pd0, self.infinite_mode)
        return pd0, sub

    def lifetimes(self, frame: np.ndarray) -> np.ndarray:
        """Lifetimes of the detected points only (the fast path for Monte Carlo)."""
        return self(frame).lifetimes

    def __call__(self, frame: np.ndarray, frame_id=None) -> MarkedPointSet:
        pd0, sub = self.diagram(frame)
        mask = self._mask_cache.get(sub.shape)
        keep = np.ones(len(pd0), dtype=bool)
        if mask is not None:
            keep &= mask[pd0.birth_y, pd0.birth_x]
        lifetimes = pd0.lifetimes
        if self.eta > 0:
            keep &= lifetimes > self.eta
        x0, y0 = (self.region.rect[0], self.region.rect[1]) if self.region.rect else (0, 0)
        provenance = {
            "frame": frame_id,
            "sigma": self.sigma,
            "eta": self.eta,
            "infinite_mode": self.infinite_mode,
            "region": self.region.to_dict(),
        }
        return MarkedPointSet(
            pd0.birth_x[keep] + x0,
            pd0.birth_y[keep] + y0,
            lifetimes[keep],
            provenance,
        )


def detect(
    frame: np.ndarray,
    region: RegionSpec,
    sigma: float = 0.0,
    eta: float = 0.0,
    infinite_mode: str = "max_pixel_value",
) -> MarkedPointSet:
    """Detect dark features in ``frame`` restricted to ``region``.

    Args:
        frame: raw or summed frame.
        region: polygon R (optional) and subimage rect (optional).
        sigma: Gaussian smoothing scale, 0 for none.
        eta: keep only lifetimes strictly above ``eta``; 0 keeps everything.
        infinite_mode: how the essential class gets a finite death.

    Returns:
        Birth pixels of the surviving dim-0 pairs with their lifetimes.
    """
    return Detector(region, sigma, eta, infinite_mode)(frame)


def count_columns(points: MarkedPointSet) -> int:
    return len(points)


def pd_threshold_objective(
    births: np.ndarray, deaths: np.ndarray, candidates: np.ndarray
) -> np.ndarray:
    """Total lifetime of the pairs alive (``b <= t < d``) at each candidate ``t``."""
    candidates = np.asarray(candidates, dtype=np.float64)
    lifetimes = np.asarray(deaths, np.float64) - np.asarray(births, np.float64)
    start = np.searchsorted(candidates, births, side="left")
    stop = np.searchsorted(candidates, deaths, side="left")
    diff = np.zeros(len(candidates) + 1)
    np.add.at(diff, start, lifetimes)
    np.add.at(diff, stop, -lifetimes)
    return np.cumsum(diff[:-1])


def pd_threshold(frame: np.ndarray) -> tuple[float, np.ndarray]:
    """Pick the binarization threshold maximizing the persistence alive at it.

    Candidates are the distinct pixel values; ties go to the smallest. Returns
    the threshold and the dark mask ``frame <= t``.
    """
    frame = np.asarray(frame)
    pd0 = resolve_infinite(compute_pd0(frame), "max_pixel_value", max_value=float(frame.max()))
    candidates = np.unique(frame).astype(np.float64)
    objective = pd_threshold_objective(pd0.births, pd0.deaths, candidates)
    t_star = float(candidates[int(np.argmax(objective))])
    return t_star, frame <= t_star
