"""Cubical persistent homology for feature detection in noisy image series."""

from cubetop.cubical import PersistenceDiagram, compute_pd, compute_pd0, compute_pd1, resolve_infinite
from cubetop.detect import Detector, MarkedPointSet
from cubetop.imagio import ImageStack, RegionSpec, load_stack, smooth, sum_frames

__version__ = "0.1.0"

__all__ = [
    "Detector",
    "ImageStack",
    "MarkedPointSet",
    "PersistenceDiagram",
    "RegionSpec",
    "compute_pd",
    "compute_pd0",
    "compute_pd1",
    "load_stack",
    "resolve_infinite",
    "smooth",
    "sum_frames",
]
