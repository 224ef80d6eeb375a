"""End-to-end localization of one POV image against one reference.

Pipeline: MSER regions -> normalized patches -> SIFT descriptors ->
KD-tree ratio matching -> RANSAC affine -> focus transfer, then the
sensor-predicted focus is blended in and the result is scored globally
with GIST. Vision failure falls back to the sensor-only focus (alpha
forced to 1) when a pose is available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .config import RunConfig
from .corpus import Corpus, ReferenceEntry, nearest_references
from .errors import (
    DegenerateRegionError,
    EmptyIndexError,
    InsufficientMatchesError,
    NoConsensusError,
)
from .features import (
    MserParams,
    detect_mser,
    normalize_patch,
    region_ellipse,
    sift_descriptor,
)
from .gist import GistParams, localization_score
from .imaging import GrayImage, Point2
from .matching import (
    Correspondence,
    DescriptorIndex,
    RansacParams,
    match_descriptors,
    ransac_affine,
)
from .sensor import (
    FlatGeometry,
    HeadPose,
    PanoramaGeometry,
    alpha_from_reliability,
    blend_focus,
    project_pose,
)

Geometry = PanoramaGeometry | FlatGeometry


@dataclass
class ImageFeatures:
    """Region centroids plus their descriptors, optionally indexed."""

    points: np.ndarray  # (n, 2) centroids
    descriptors: list
    index: DescriptorIndex | None = None

    def ensure_index(self) -> DescriptorIndex:
        if self.index is None:
            self.index = DescriptorIndex(self.descriptors)
        return self.index


@dataclass
class LocalizationResult:
    f_pov: Point2
    f_ref: Point2 | None
    f_s: Point2 | None
    f: Point2 | None
    alpha: float
    score: float
    inliers: int
    accepted: bool
    mode: str  # "matched" | "sensor_only" | "failed"
    flags: list[str] = field(default_factory=list)
    ref_id: str | None = None


def extract_features(image: GrayImage, config: RunConfig | None = None) -> ImageFeatures:
    """Detect regions and describe them on viewpoint-normalized patches.

    Regions with degenerate moment ellipses are dropped. When detection
    floods (busy textures), only the most stable max_regions are kept so
    downstream matching stays bounded.
    """
    cfg = config or RunConfig()
    params = MserParams(
        delta=cfg.mser_delta,
        min_area=cfg.mser_min_area,
        max_area=cfg.mser_max_area,
        max_variation=cfg.mser_max_variation,
    )
    regions = detect_mser(image, params)
    max_regions = 800
    if len(regions) > max_regions:
        order = sorted(range(len(regions)), key=lambda i: (regions[i].variation, i))
        keep = sorted(order[:max_regions])
        regions = [regions[i] for i in keep]

    points = []
    descriptors = []
    for region in regions:
        try:
            ellipse = region_ellipse(region)
        except DegenerateRegionError:
            continue
        patch = normalize_patch(image, ellipse, cfg.patch_size, cfg.patch_scale_factor)
        desc = sift_descriptor(patch)
        if desc.is_degenerate:
            continue
        points.append([region.centroid.x, region.centroid.y])
        descriptors.append(desc)
    pts = np.array(points, dtype=np.float64) if points else np.zeros((0, 2))
    return ImageFeatures(points=pts, descriptors=descriptors)


def _match_focus(
    pov_features: ImageFeatures,
    ref_features: ImageFeatures,
    f_pov: Point2,
    ref_size: tuple[int, int],
    cfg: RunConfig,
) -> tuple[Point2, int, list[Correspondence]] | None:
    """Vision-only focus transfer; None when matching finds no consensus."""
    if not pov_features.descriptors or not ref_features.descriptors:
        return None
    try:
        index = ref_features.ensure_index()
    except EmptyIndexError:
        return None
    correspondences = match_descriptors(index, pov_features.descriptors, cfg.match_ratio)
    params = RansacParams(
        iterations=cfg.ransac_iterations,
        inlier_threshold=cfg.scaled_inlier_threshold(*ref_size),
        min_inliers=cfg.ransac_min_inliers,
        seed=cfg.ransac_seed,
        exhaustive=len(correspondences) <= cfg.ransac_exhaustive_max,
    )
    try:
        result = ransac_affine(
            correspondences,
            pov_features.points,
            ref_features.points,
            params,
            f_pov=f_pov,
        )
    except (InsufficientMatchesError, NoConsensusError):
        return None
    return result.f_ref, int(result.inlier_indices.size), correspondences


def localize_pair(
    pov: GrayImage,
    ref: GrayImage,
    geometry: Geometry | None = None,
    pose: HeadPose | None = None,
    config: RunConfig | None = None,
    pov_features: ImageFeatures | None = None,
    ref_features: ImageFeatures | None = None,
    alpha_override: float | None = None,
    ref_id: str | None = None,
) -> LocalizationResult:
    """Localize one POV frame against one reference image."""
    cfg = config or RunConfig()
    flags: list[str] = []
    f_pov = pov.center

    if pov_features is None:
        pov_features = extract_features(pov, cfg)
    if ref_features is None:
        ref_features = extract_features(ref, cfg)

    matched = _match_focus(pov_features, ref_features, f_pov, (ref.width, ref.height), cfg)

    f_s: Point2 | None = None
    alpha = 0.0
    if pose is not None and geometry is not None:
        f_s = project_pose(pose, geometry)
        if alpha_override is not None:
            alpha = alpha_override
        else:
            alpha = alpha_from_reliability(pose.reliability, cfg.alpha_max)
    else:
        flags.append("vision_only")

    pano_width = ref.width if ref.panoramic else None
    if matched is not None:
        f_ref, inliers, _ = matched
        mode = "matched"
        if f_s is not None:
            f = blend_focus(f_s, f_ref, alpha, pano_width)
        else:
            f = f_ref
    elif f_s is not None:
        f_ref, inliers = None, 0
        mode = "sensor_only"
        alpha = 1.0
        f = f_s
        flags.append("no_consensus_fallback")
    else:
        f_ref, inliers = None, 0
        mode = "failed"
        f = None
        flags.append("no_consensus")

    if f is not None:
        gist_params = GistParams(
            canonical_size=cfg.gist_canonical_size,
            scales=cfg.gist_scales,
            orientations=cfg.gist_orientations,
            grid=cfg.gist_grid,
        )
        score = localization_score(pov, ref, f, gist_params, cfg.pano_window_fraction)
    else:
        score = math.inf
    accepted = mode != "failed" and score <= cfg.score_threshold

    return LocalizationResult(
        f_pov=f_pov,
        f_ref=f_ref,
        f_s=f_s,
        f=f,
        alpha=alpha,
        score=score,
        inliers=inliers,
        accepted=accepted,
        mode=mode,
        flags=flags,
        ref_id=ref_id,
    )


class FeatureCache:
    """Per-reference feature cache shared by video, joint and service runs."""

    def __init__(self, config: RunConfig | None = None):
        self.config = config or RunConfig()
        self._cache: dict[str, ImageFeatures] = {}

    def features(self, key: str, image: GrayImage) -> ImageFeatures:
        if key not in self._cache:
            self._cache[key] = extract_features(image, self.config)
        return self._cache[key]


def localize_against_corpus(
    pov: GrayImage,
    corpus: Corpus,
    lat: float,
    lon: float,
    pose: HeadPose | None = None,
    config: RunConfig | None = None,
    candidates: int = 1,
    cache: FeatureCache | None = None,
    alpha_override: float | None = None,
) -> tuple[LocalizationResult, ReferenceEntry]:
    """Localize against the geo-nearest entries, best score wins.

    With candidates > 1 the N nearest references are all tried and the
    lowest-scoring successful match is returned; if nothing matches, the
    sensor-only result whose reference heading is closest to the pose
    yaw is kept (first candidate when no pose exists either).
    """
    cfg = config or RunConfig()
    cache = cache or FeatureCache(cfg)
    entries = nearest_references(corpus, lat, lon, max(1, candidates))
    pov_features = extract_features(pov, cfg)

    results: list[tuple[LocalizationResult, ReferenceEntry]] = []
    for entry in entries:
        ref = corpus.image(entry.id)
        result = localize_pair(
            pov,
            ref,
            geometry=entry.geometry,
            pose=pose,
            config=cfg,
            pov_features=pov_features,
            ref_features=cache.features(entry.id, ref),
            alpha_override=alpha_override,
            ref_id=entry.id,
        )
        results.append((result, entry))

    matched = [(r, e) for r, e in results if r.mode == "matched"]
    if matched:
        return min(matched, key=lambda pair: pair[0].score)
    if pose is not None:
        from .sensor import euler_from_rotation

        yaw = euler_from_rotation(pose.rotation).yaw
        return min(
            results,
            key=lambda pair: abs(math.remainder(pair[1].heading - yaw, 2.0 * math.pi)),
        )
    return results[0]


def _point_json(p: Point2 | None) -> list[float] | None:
    return None if p is None else [float(p.x), float(p.y)]


def result_record(result: LocalizationResult, frame: str) -> dict:
    """JSON-able record, one per localized frame (schema version 1)."""
    score = result.score
    return {
        "v": 1,
        "frame": frame,
        "f_pov": _point_json(result.f_pov),
        "f_ref": _point_json(result.f_ref),
        "f_s": _point_json(result.f_s),
        "f": _point_json(result.f),
        "alpha": float(result.alpha),
        "score": None if math.isinf(score) else float(score),
        "inliers": int(result.inliers),
        "accepted": bool(result.accepted),
        "mode": result.mode,
        "flags": list(result.flags),
        "ref_id": result.ref_id,
    }


def record_to_result(record: dict) -> LocalizationResult:
    """Inverse of result_record (used by evaluation and the thin client)."""

    def pt(v: Iterable[float] | None) -> Point2 | None:
        return None if v is None else Point2(float(v[0]), float(v[1]))

    score = record.get("score")
    return LocalizationResult(
        f_pov=pt(record.get("f_pov")),
        f_ref=pt(record.get("f_ref")),
        f_s=pt(record.get("f_s")),
        f=pt(record.get("f")),
        alpha=float(record.get("alpha", 0.0)),
        score=math.inf if score is None else float(score),
        inliers=int(record.get("inliers", 0)),
        accepted=bool(record.get("accepted", False)),
        mode=str(record.get("mode", "failed")),
        flags=list(record.get("flags", [])),
        ref_id=record.get("ref_id"),
    )
