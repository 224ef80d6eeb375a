"""Interest-region detection and local descriptors."""

from .mser import InterestRegion, MserParams, detect_mser, dump_regions
from .descriptors import (
    Descriptor,
    Ellipse,
    normalize_patch,
    region_ellipse,
    sift_descriptor,
)

__all__ = [
    "Descriptor",
    "Ellipse",
    "InterestRegion",
    "MserParams",
    "detect_mser",
    "dump_regions",
    "normalize_patch",
    "region_ellipse",
    "sift_descriptor",
]
