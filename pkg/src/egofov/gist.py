"""Global scene descriptors and localization scoring.

A bank of oriented log-Gabor transfer functions is applied in the
frequency domain to the locally contrast-normalized image; the mean
response magnitude over a coarse spatial grid forms the descriptor.
The localization score is the L2 distance between unit-normalized
descriptors of the POV image and a reference window around the focus
estimate: lower is better, and a threshold turns it into accept/reject.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy import ndimage

from .errors import ParameterError
from .imaging import GrayImage, Point2, Window, crop, resize_bilinear

_MAX_FREQUENCY = 0.35
_SCALE_STEP = 1.9
_RADIAL_SIGMA = 0.65
_NORM_EPSILON = 1e-3


@dataclass(frozen=True)
class GistParams:
    canonical_size: int = 128
    scales: int = 4
    orientations: int = 8
    grid: int = 4

    def __post_init__(self) -> None:
        if min(self.canonical_size, self.scales, self.orientations, self.grid) < 1:
            raise ValueError("all GIST parameters must be >= 1")

    @property
    def length(self) -> int:
        return self.scales * self.orientations * self.grid**2


_BANK_CACHE: dict[GistParams, np.ndarray] = {}


def _filter_bank(params: GistParams) -> np.ndarray:
    """One-sided log-Gabor transfer functions, shape (S*O, n, n)."""
    bank = _BANK_CACHE.get(params)
    if bank is not None:
        return bank
    n = params.canonical_size
    fx = np.fft.fftfreq(n)
    fy = np.fft.fftfreq(n)
    gx, gy = np.meshgrid(fx, fy)
    radius = np.hypot(gx, gy)
    angle = np.arctan2(gy, gx)
    radius[0, 0] = 1.0  # avoid log(0); the DC bin is zeroed below

    log_r = np.log(radius)
    sigma_theta = math.pi / params.orientations / 1.7
    filters = []
    for s in range(params.scales):
        f0 = _MAX_FREQUENCY / (_SCALE_STEP**s)
        radial = np.exp(-((log_r - math.log(f0)) ** 2) / (2.0 * math.log(_RADIAL_SIGMA) ** 2))
        radial[0, 0] = 0.0
        for o in range(params.orientations):
            theta0 = math.pi * o / params.orientations
            dtheta = np.angle(np.exp(1j * (angle - theta0)))
            filters.append(radial * np.exp(-(dtheta**2) / (2.0 * sigma_theta**2)))
    bank = np.stack(filters)
    _BANK_CACHE[params] = bank
    return bank


def _local_normalize(pixels: np.ndarray, window: int) -> np.ndarray:
    img = pixels.astype(np.float64) / 255.0
    mean = ndimage.uniform_filter(img, size=window, mode="reflect")
    sq = ndimage.uniform_filter(img * img, size=window, mode="reflect")
    std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    return (img - mean) / (std + _NORM_EPSILON)


def _grid_means(response: np.ndarray, grid: int) -> np.ndarray:
    n = response.shape[0]
    edges = np.linspace(0, n, grid + 1).astype(int)
    out = np.empty(grid * grid)
    k = 0
    for gy in range(grid):
        for gx in range(grid):
            cell = response[edges[gy] : edges[gy + 1], edges[gx] : edges[gx + 1]]
            out[k] = cell.mean()
            k += 1
    return out


def gist_descriptor(image: GrayImage, params: GistParams | None = None) -> np.ndarray:
    """Spectral-signature descriptor, scale-major then orientation then cells."""
    if params is None:
        params = GistParams()
    canonical = resize_bilinear(image, params.canonical_size, params.canonical_size)
    normalized = _local_normalize(canonical.pixels, max(2, params.canonical_size // 8))
    spectrum = np.fft.fft2(normalized)
    bank = _filter_bank(params)
    parts = []
    for transfer in bank:
        response = np.abs(np.fft.ifft2(spectrum * transfer))
        parts.append(_grid_means(response, params.grid))
    return np.concatenate(parts)


def descriptor_distance(a: np.ndarray, b: np.ndarray, normalized: bool = True) -> float:
    """L2 distance, by default between unit-normalized descriptors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if normalized:
        na = np.linalg.norm(a)
        nb = np.linalg.norm(b)
        a = a / na if na > 0 else a
        b = b / nb if nb > 0 else b
    return float(np.linalg.norm(a - b))


def match_window(
    pov: GrayImage,
    ref: GrayImage,
    f: Point2,
    pano_window_fraction: float = 0.25,
) -> Window:
    """Reference window around f with the POV aspect ratio.

    Panoramic references use a fixed fraction of the panorama width;
    flat references use the POV dimensions directly.
    """
    if ref.panoramic:
        width = max(1, round(ref.width * pano_window_fraction))
    else:
        width = pov.width
    height = max(1, round(width * pov.height / pov.width))
    return Window(center=f, width=width, height=height)


def localization_score(
    pov: GrayImage,
    ref: GrayImage,
    f: Point2,
    params: GistParams | None = None,
    pano_window_fraction: float = 0.25,
) -> float:
    """GIST distance between the POV image and the window around f."""
    window = match_window(pov, ref, f, pano_window_fraction)
    ref_crop = crop(ref, window)
    q_pov = gist_descriptor(pov, params)
    q_ref = gist_descriptor(ref_crop, params)
    return descriptor_distance(q_pov, q_ref)


def accept(score: float, threshold: float) -> bool:
    """Accept iff score <= threshold (inclusive boundary)."""
    if threshold <= 0:
        raise ParameterError("threshold must be positive")
    return score <= threshold


@dataclass
class ReferenceCandidate:
    """One concurrent reference stream to choose among."""

    image: GrayImage
    focus: Point2 | None  # localized focus, None when matching failed
    heading: float | None = field(default=None)  # world yaw of the camera axis


SelectionMode = Literal["score", "sensor"]


def select_reference(
    pov: GrayImage,
    candidates: Sequence[ReferenceCandidate],
    params: GistParams | None = None,
    pose_yaw: float | None = None,
    pano_window_fraction: float = 0.25,
) -> tuple[int, SelectionMode, float]:
    """Pick the best reference among concurrent streams.

    Candidates with a localized focus compete on localization score
    (ties go to the lower index). When no candidate matched, the one
    whose heading is angularly closest to the pose yaw wins; without a
    pose either, the first candidate is returned.

    Returns (index, mode, score_or_angular_gap).
    """
    if not candidates:
        raise ParameterError("select_reference needs at least one candidate")
    best: tuple[float, int] | None = None
    for i, cand in enumerate(candidates):
        if cand.focus is None:
            continue
        score = localization_score(pov, cand.image, cand.focus, params, pano_window_fraction)
        if best is None or score < best[0]:
            best = (score, i)
    if best is not None:
        return best[1], "score", best[0]

    if pose_yaw is not None:
        gap_best: tuple[float, int] | None = None
        for i, cand in enumerate(candidates):
            if cand.heading is None:
                continue
            gap = abs(math.remainder(cand.heading - pose_yaw, 2.0 * math.pi))
            if gap_best is None or gap < gap_best[0]:
                gap_best = (gap, i)
        if gap_best is not None:
            return gap_best[1], "sensor", gap_best[0]
    return 0, "sensor", math.inf
