"""Measurement ellipses, normalized patches and SIFT descriptors.

A detected region is summarized by the ellipse of its second moments,
dilated by a measurement scale and warped onto a square patch; the
patch orientation follows the ellipse's major axis so descriptors are
comparable across viewpoint changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateRegionError
from ..imaging import GrayImage, Point2, _bilinear_sample
from .mser import InterestRegion

SIFT_BINS = 8
SIFT_GRID = 4
SIFT_CLAMP = 0.2


@dataclass
class Ellipse:
    center: Point2
    major_axis: float
    minor_axis: float
    orientation: float  # radians of the major axis, in [-pi/2, pi/2)


@dataclass
class Descriptor:
    """128-dimensional gradient histogram, unit L2 norm unless degenerate."""

    values: np.ndarray

    @property
    def is_degenerate(self) -> bool:
        return not np.any(self.values)


def region_ellipse(region: InterestRegion) -> Ellipse:
    """Ellipse of the region's second moments, area-matched to the region.

    Axes are scaled so the ellipse area equals the region pixel count;
    raises DegenerateRegionError when the moment matrix has no usable
    determinant (callers drop such regions).
    """
    m = np.asarray(region.second_moments, dtype=np.float64)
    det = float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])
    if det <= 1e-12:
        raise DegenerateRegionError("second-moment matrix is (near-)singular")
    evals, evecs = np.linalg.eigh(m)
    minor_sd, major_sd = math.sqrt(max(evals[0], 0.0)), math.sqrt(evals[1])
    vec = evecs[:, 1]
    orientation = math.atan2(vec[1], vec[0])
    if orientation < -math.pi / 2:
        orientation += math.pi
    elif orientation >= math.pi / 2:
        orientation -= math.pi
    # isotropic moments: numpy returns axis-aligned eigenvectors, keep 0
    scale = math.sqrt(region.pixel_count / (math.pi * major_sd * minor_sd))
    return Ellipse(
        center=region.centroid,
        major_axis=scale * major_sd,
        minor_axis=scale * minor_sd,
        orientation=orientation,
    )


def normalize_patch(
    image: GrayImage,
    ellipse: Ellipse,
    patch_size: int = 32,
    scale_factor: float = 2.0,
) -> GrayImage:
    """Warp the (dilated) ellipse onto a square patch.

    The ellipse is dilated by scale_factor, rotated to put its major
    axis along x, and sampled bilinearly with border clamping onto a
    patch_size x patch_size grid. When the dilated ellipse is a circle
    of diameter patch_size the warp reduces to a plain crop.
    """
    if patch_size < 8:
        raise ValueError("patch_size must be >= 8")
    half = (patch_size - 1) / 2.0
    u = np.arange(patch_size) - half
    du, dv = np.meshgrid(u, u)
    sx = 2.0 * scale_factor * ellipse.major_axis / patch_size
    sy = 2.0 * scale_factor * ellipse.minor_axis / patch_size
    cos_t = math.cos(ellipse.orientation)
    sin_t = math.sin(ellipse.orientation)
    xs = ellipse.center.x + cos_t * sx * du - sin_t * sy * dv
    ys = ellipse.center.y + sin_t * sx * du + cos_t * sy * dv
    samples = _bilinear_sample(image.pixels, xs, ys)
    return GrayImage(np.clip(np.floor(samples + 0.5), 0, 255).astype(np.uint8))


def sift_descriptor(patch: GrayImage) -> Descriptor:
    """Standard SIFT layout on a pre-normalized patch.

    4x4 spatial cells x 8 orientation bins of Gaussian-weighted gradient
    magnitudes with trilinear soft binning; L2 normalization, 0.2 bin
    clamp, renormalization. A gradient-free patch yields the all-zero
    descriptor (flagged degenerate).
    """
    if patch.width != patch.height:
        raise ValueError("sift_descriptor expects a square patch")
    side = patch.width
    if side < 16:
        raise ValueError("patch side must be >= 16")

    p = patch.pixels.astype(np.float64)
    gy, gx = np.gradient(p)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), 2.0 * math.pi)

    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    centre = (side - 1) / 2.0
    sigma = side / 2.0
    weight = np.exp(-((xx - centre) ** 2 + (yy - centre) ** 2) / (2.0 * sigma**2))
    wmag = (mag * weight).reshape(-1)

    cell = side / SIFT_GRID
    cxf = xx.reshape(-1) / cell - 0.5
    cyf = yy.reshape(-1) / cell - 0.5
    obf = ang.reshape(-1) / (2.0 * math.pi / SIFT_BINS) - 0.5

    hist = np.zeros((SIFT_GRID, SIFT_GRID, SIFT_BINS))
    cx0 = np.floor(cxf).astype(np.int64)
    cy0 = np.floor(cyf).astype(np.int64)
    ob0 = np.floor(obf).astype(np.int64)
    fx = cxf - cx0
    fy = cyf - cy0
    fo = obf - ob0
    for dx_bin, wx in ((0, 1.0 - fx), (1, fx)):
        cx = cx0 + dx_bin
        okx = (cx >= 0) & (cx < SIFT_GRID)
        for dy_bin, wy in ((0, 1.0 - fy), (1, fy)):
            cy = cy0 + dy_bin
            oky = okx & (cy >= 0) & (cy < SIFT_GRID)
            for do_bin, wo in ((0, 1.0 - fo), (1, fo)):
                ob = np.mod(ob0 + do_bin, SIFT_BINS)
                w = wmag * wx * wy * wo
                np.add.at(
                    hist,
                    (cy[oky], cx[oky], ob[oky]),
                    w[oky],
                )

    vec = hist.reshape(-1)
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:
        return Descriptor(np.zeros(SIFT_GRID * SIFT_GRID * SIFT_BINS))
    vec = np.minimum(vec / norm, SIFT_CLAMP)
    norm = float(np.linalg.norm(vec))
    return Descriptor(vec / norm)
