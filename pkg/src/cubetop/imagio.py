"""Image model, frame-series ingestion, regions and discrete Gaussian smoothing.

Frames are 2D numpy arrays indexed ``frame[y, x]`` holding raw, nonnegative
counts (integer dtypes) or reals after smoothing. Pixel coordinates in every
public API are ``(x, y)`` with ``x`` the column index.
"""

from __future__ import annotations

import functools
import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
import shapely

PGM_NAME = "frame_{:06d}.pgm"
_PGM_RE = re.compile(r"^frame_(\d{6})\.pgm$")


class ImageFormatError(ValueError):
    """Raised for missing, corrupt or inconsistent image files."""


class RegionError(ValueError):
    """Raised for invalid polygons or rectangles."""


def validate_frame(frame: np.ndarray) -> np.ndarray:
    """Check the image-model invariants and return the frame as an array."""
    arr = np.asarray(frame)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"frame must be a non-empty 2D grid, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)):
            raise ValueError("frame contains non-finite pixel values")
    elif arr.dtype.kind not in "iub":
        raise ValueError(f"unsupported pixel dtype {arr.dtype}")
    if arr.size and arr.min() < 0:
        raise ValueError("frame contains negative pixel values")
    return arr


@dataclass
class ImageStack:
    """An ordered series of equally sized frames, stored as ``(N, height, width)``."""

    frames: np.ndarray

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames)
        if frames.ndim != 3 or frames.shape[0] < 1:
            raise ValueError(f"stack must have shape (N, height, width), got {frames.shape}")
        if frames.shape[1] < 1 or frames.shape[2] < 1:
            raise ValueError("stack frames must be non-empty")
        self.frames = frames

    @classmethod
    def from_frames(cls, frames: Iterable[np.ndarray]) -> "ImageStack":
        frames = [validate_frame(f) for f in frames]
        if not frames:
            raise ValueError("stack needs at least one frame")
        shape = frames[0].shape
        for i, f in enumerate(frames):
            if f.shape != shape:
                raise ImageFormatError(
                    f"inconsistent dimensions: frame {i} is {f.shape}, expected {shape}"
                )
        return cls(np.stack(frames))

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def __len__(self) -> int:
        return self.frame_count

    def __getitem__(self, index: int) -> np.ndarray:
        return self.frames[index]


@dataclass(frozen=True)
class RegionSpec:
    """A polygonal region and/or a half-open integer rectangle, in pixel coordinates.

    ``polygon`` is a list of ``(x, y)`` vertices; ``rect`` is ``(x0, y0, x1, y1)``
    covering columns ``x0 <= x < x1`` and rows ``y0 <= y < y1``.
    """

    polygon: tuple[tuple[float, float], ...] | None = None
    rect: tuple[int, int, int, int] | None = None

    def __post_init__(self) -> None:
        if self.polygon is not None:
            poly = tuple((float(x), float(y)) for x, y in self.polygon)
            object.__setattr__(self, "polygon", poly)
            _shapely_polygon(poly)
        if self.rect is not None:
            rect = tuple(int(v) for v in self.rect)
            if len(rect) != 4:
                raise RegionError("rect must have four entries x0, y0, x1, y1")
            x0, y0, x1, y1 = rect
            if x1 <= x0 or y1 <= y0:
                raise RegionError(f"empty rect {rect}")
            object.__setattr__(self, "rect", rect)

    @classmethod
    def from_dict(cls, data: dict) -> "RegionSpec":
        polygon = data.get("polygon")
        rect = data.get("rect")
        if polygon is None and rect is None:
            raise RegionError("region needs a 'polygon' or a 'rect'")
        return cls(
            polygon=tuple(tuple(v) for v in polygon) if polygon is not None else None,
            rect=tuple(rect) if rect is not None else None,
        )

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "RegionSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out: dict = {}
        if self.polygon is not None:
            out["polygon"] = [list(v) for v in self.polygon]
        if self.rect is not None:
            out["rect"] = list(self.rect)
        return out

    def check_rect(self, shape: tuple[int, int]) -> tuple[int, int, int, int]:
        """Return the rect, raising if it does not lie inside a frame of ``shape``."""
        if self.rect is None:
            raise RegionError("region has no rect")
        x0, y0, x1, y1 = self.rect
        height, width = shape
        if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
            raise RegionError(f"rect {self.rect} outside frame of {width}x{height}")
        return self.rect

    def crop(self, frame: np.ndarray) -> np.ndarray:
        """Restrict ``frame`` to the rect, or return it whole if there is none."""
        if self.rect is None:
            return frame
        x0, y0, x1, y1 = self.check_rect(frame.shape)
        return frame[y0:y1, x0:x1]

    def shifted(self, dx: float, dy: float) -> "RegionSpec":
        """The polygon translated by ``(dx, dy)``; the rect is dropped."""
        if self.polygon is None:
            return RegionSpec()
        return RegionSpec(polygon=tuple((x + dx, y + dy) for x, y in self.polygon))


def rect_region(x0: int, y0: int, x1: int, y1: int) -> RegionSpec:
    return RegionSpec(rect=(x0, y0, x1, y1))


# --------------------------------------------------------------------------- I/O


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated PGM header")
    return data[start:pos], pos


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary (P5) PGM file into a ``uint8`` or ``uint16`` array."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    magic, pos = _read_token(data, 0)
    if magic != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        width_tok, pos = _read_token(data, pos)
        height_tok, pos = _read_token(data, pos)
        maxval_tok, pos = _read_token(data, pos)
        width, height, maxval = int(width_tok), int(height_tok), int(maxval_tok)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: corrupt PGM header") from exc
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: invalid dimensions {width}x{height}")
    if not 0 < maxval <= 65535:
        raise ImageFormatError(f"{path}: maxval {maxval} out of range")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = width * height * dtype.itemsize
    raster = data[pos : pos + nbytes]
    if len(raster) < nbytes:
        raise ImageFormatError(f"{path}: truncated frame data")
    arr = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    if arr.size and int(arr.max()) > maxval:
        raise ImageFormatError(f"{path}: pixel value exceeds maxval {maxval}")
    return arr.astype(np.uint16 if maxval > 255 else np.uint8)


def write_pgm(path: str | os.PathLike, frame: np.ndarray, maxval: int | None = None) -> None:
    """Write an integer frame as a binary PGM, 16-bit big-endian when maxval > 255."""
    arr = np.asarray(frame)
    if arr.ndim != 2:
        raise ValueError("PGM frames must be 2D")
    if arr.dtype.kind == "f":
        if not np.allclose(arr, np.rint(arr)):
            raise ValueError("PGM frames must hold integer values")
        arr = np.rint(arr)
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError("PGM frames must be nonnegative")
    top = int(arr.max()) if arr.size else 0
    if maxval is None:
        maxval = max(top, 1)
    if top > maxval or maxval > 65535:
        raise ImageFormatError(f"maxval overflow: pixel {top}, maxval {maxval}")
    dtype = ">u2" if maxval > 255 else "u1"
    height, width = arr.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    _atomic_write_bytes(path, header + arr.astype(dtype).tobytes())


def _atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _load_pgm_dir(path: Path) -> ImageStack:
    if not path.is_dir():
        raise ImageFormatError(f"{path} is not a directory")
    indexed = []
    for entry in path.iterdir():
        match = _PGM_RE.match(entry.name)
        if match:
            indexed.append((int(match.group(1)), entry))
    if not indexed:
        raise ImageFormatError(f"no frame_%06d.pgm files in {path}")
    indexed.sort()
    frames = [read_pgm(p) for _, p in indexed]
    return ImageStack.from_frames(frames)


def _load_raw_u16(path: Path) -> ImageStack:
    header_path = path / "header.json"
    data_path = path / "frames.bin"
    try:
        header = json.loads(header_path.read_text())
    except OSError as exc:
        raise ImageFormatError(f"cannot read {header_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ImageFormatError(f"corrupt header {header_path}: {exc}") from exc
    try:
        width = int(header["width"])
        height = int(header["height"])
        count = int(header["num_frames"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ImageFormatError(f"header needs integer width, height, num_frames: {exc}") from exc
    dtype = header.get("dtype", "u16le")
    if dtype != "u16le":
        raise ImageFormatError(f"unsupported dtype {dtype!r}, expected 'u16le'")
    if width < 1 or height < 1 or count < 1:
        raise ImageFormatError("header dimensions must be positive")
    if not data_path.exists():
        raise ImageFormatError(f"missing {data_path}")
    expected = width * height * count * 2
    actual = data_path.stat().st_size
    if actual < expected:
        raise ImageFormatError(
            f"truncated frame data: {actual} bytes, expected {expected}"
        )
    if actual > expected:
        raise ImageFormatError(f"unexpected trailing data: {actual} bytes, expected {expected}")
    frames = np.fromfile(data_path, dtype="<u2").reshape(count, height, width)
    return ImageStack(frames.astype(np.uint16))


def load_stack(path: str | os.PathLike, format: str = "pgm_dir") -> ImageStack:
    """Load a frame series.

    Args:
        path: directory holding ``frame_%06d.pgm`` files (``pgm_dir``) or
            ``header.json`` + ``frames.bin`` (``raw_u16``).
        format: ``"pgm_dir"`` or ``"raw_u16"``.

    Returns:
        The stack with frames in index order and raw stored counts.
    """
    path = Path(path)
    if not path.exists():
        raise ImageFormatError(f"{path} does not exist")
    if format == "pgm_dir":
        return _load_pgm_dir(path)
    if format == "raw_u16":
        return _load_raw_u16(path)
    raise ValueError(f"unknown stack format {format!r}")


def save_stack(stack: ImageStack, path: str | os.PathLike, format: str = "pgm_dir") -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if format == "pgm_dir":
        for i, frame in enumerate(stack.frames):
            write_pgm(path / PGM_NAME.format(i), frame)
    elif format == "raw_u16":
        frames = np.asarray(stack.frames)
        if frames.size and (frames.min() < 0 or frames.max() > 65535):
            raise ImageFormatError("pixel values do not fit in u16")
        header = {
            "width": stack.width,
            "height": stack.height,
            "num_frames": stack.frame_count,
            "dtype": "u16le",
        }
        _atomic_write_bytes(path / "frames.bin", frames.astype("<u2").tobytes())
        _atomic_write_bytes(path / "header.json", json.dumps(header).encode())
    else:
        raise ValueError(f"unknown stack format {format!r}")


# ------------------------------------------------------------------- summation


def sum_frames(stack: ImageStack, m: int, ell: int) -> np.ndarray:
    """Pixelwise sum of frames ``ell, ..., ell + m - 1`` (0-based)."""
    if m < 1 or ell < 0 or ell + m > stack.frame_count:
        raise IndexError(
            f"window [{ell}, {ell + m}) out of range for {stack.frame_count} frames"
        )
    window = stack.frames[ell : ell + m]
    if window.dtype.kind == "f":
        return window.sum(axis=0, dtype=np.float64)
    return window.sum(axis=0, dtype=np.int64)


def window_starts(frame_count: int, m: int, step: int = 1) -> list[int]:
    """Start indices of length-``m`` windows advancing by ``step``."""
    if m < 1 or step < 1:
        raise ValueError("m and step must be >= 1")
    return list(range(0, frame_count - m + 1, step))


# -------------------------------------------------------------------- smoothing


@dataclass(frozen=True)
class GaussianKernel:
    """Truncated, renormalized isotropic Gaussian on a ``(2r+1) x (2r+1)`` grid."""

    sigma: float
    radius: int
    weights1d: np.ndarray = field(repr=False)

    @property
    def weights(self) -> np.ndarray:
        return np.outer(self.weights1d, self.weights1d)


def default_radius(sigma: float) -> int:
    return int(math.ceil(4.0 * sigma))


@functools.lru_cache(maxsize=64)
def gaussian_kernel(sigma: float, radius: int | None = None) -> GaussianKernel:
    """Build the sampled Gaussian kernel; ``sigma == 0`` gives the unit impulse."""
    if not math.isfinite(sigma) or sigma < 0:
        raise ValueError(f"sigma must be finite and >= 0, got {sigma}")
    if sigma == 0:
        return GaussianKernel(0.0, 0, np.ones(1))
    if radius is None:
        radius = default_radius(sigma)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    # the 2D kernel factorizes, so normalizing the 1D factor normalizes the grid
    w = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return GaussianKernel(float(sigma), int(radius), w / w.sum())


@functools.lru_cache(maxsize=64)
def _border_mass(sigma: float, radius: int, shape: tuple[int, int]) -> np.ndarray:
    """In-frame kernel mass at every pixel (1 away from the borders)."""
    w = gaussian_kernel(sigma, radius).weights1d
    mass_y = ndimage.correlate1d(np.ones(shape[0]), w, mode="constant", cval=0.0)
    mass_x = ndimage.correlate1d(np.ones(shape[1]), w, mode="constant", cval=0.0)
    mass = np.outer(mass_y, mass_x)
    mass.flags.writeable = False
    return mass


def smooth(frame: np.ndarray, sigma: float, radius: int | None = None) -> np.ndarray:
    """Convolve with a truncated Gaussian, renormalizing by in-frame kernel mass.

    Pixels outside the frame are treated as absent rather than zero, so a
    constant frame stays constant up to its borders. ``sigma == 0`` returns
    the input unchanged.
    """
    kernel = gaussian_kernel(sigma, radius)
    if kernel.sigma == 0:
        return frame
    arr = np.asarray(frame, dtype=np.float64)
    w = kernel.weights1d
    out = ndimage.correlate1d(arr, w, axis=0, mode="constant", cval=0.0)
    out = ndimage.correlate1d(out, w, axis=1, mode="constant", cval=0.0)
    out /= _border_mass(kernel.sigma, kernel.radius, arr.shape)
    # guard against round-off pushing a zero image below zero
    np.maximum(out, 0.0, out=out)
    return out


# ---------------------------------------------------------------------- polygons


def _shapely_polygon(vertices: Sequence[Sequence[float]]) -> shapely.Polygon:
    if len(vertices) < 3:
        raise RegionError("degenerate polygon: fewer than 3 vertices")
    poly = shapely.Polygon(vertices)
    if not poly.is_valid or poly.area <= 0:
        raise RegionError("degenerate polygon: self-intersecting or zero area")
    return poly


def polygon_mask(polygon: Sequence[Sequence[float]], shape: tuple[int, int]) -> np.ndarray:
    """Boolean ``(height, width)`` mask of pixels whose centers lie strictly inside."""
    poly = _shapely_polygon(polygon)
    height, width = shape
    ys, xs = np.mgrid[0:height, 0:width]
    inside = shapely.contains_xy(poly, xs.ravel() + 0.5, ys.ravel() + 0.5)
    return inside.reshape(height, width)


def pixels_in_polygon(region: RegionSpec, shape: tuple[int, int]) -> set[tuple[int, int]]:
    """Pixels ``(x, y)`` of a ``shape`` frame whose centers are strictly inside the polygon."""
    if region.polygon is None:
        raise RegionError("region has no polygon")
    ys, xs = np.nonzero(polygon_mask(region.polygon, shape))
    return {(int(x), int(y)) for x, y in zip(xs, ys)}
