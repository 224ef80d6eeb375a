"""Descriptor correspondence, robust affine estimation, focus transfer.

The KD-tree returns exact nearest neighbors (equal-distance ties break
toward the lower index) so matching results are reproducible and can be
checked against a linear scan. RANSAC is seeded and fully deterministic,
with an exhaustive-sampling mode that tries every 3-subset for small
correspondence sets.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateSampleError,
    EmptyIndexError,
    InsufficientMatchesError,
    NoConsensusError,
)
from .features import Descriptor
from .imaging import Point2


@dataclass
class Correspondence:
    pov_index: int
    ref_index: int
    descriptor_distance: float


@dataclass
class AffineMap:
    """2x3 matrix mapping POV pixel coordinates into the reference."""

    m: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError("affine matrix must be 2x3")
        if not np.all(np.isfinite(m)):
            raise ValueError("affine matrix entries must be finite")
        if abs(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]) <= 1e-12:
            raise ValueError("affine linear part is degenerate")
        self.m = m

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.m[:, :2].T + self.m[:, 2]

    def compose(self, other: "AffineMap") -> "AffineMap":
        """Map equal to applying ``other`` first, then this map."""
        lin = self.m[:, :2] @ other.m[:, :2]
        off = self.m[:, :2] @ other.m[:, 2] + self.m[:, 2]
        return AffineMap(np.column_stack([lin, off]))


@dataclass
class RansacParams:
    iterations: int = 2000
    inlier_threshold: float = 3.0
    min_inliers: int = 8
    seed: int = 7_919
    exhaustive: bool = False

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if self.min_inliers < 3:
            raise ValueError("min_inliers must be >= 3")


@dataclass
class MatchResult:
    affine: AffineMap
    inlier_indices: np.ndarray
    f_ref: Point2 | None = field(default=None)


class _Node:
    __slots__ = ("dim", "split", "left", "right", "indices")

    def __init__(self, dim=-1, split=0.0, left=None, right=None, indices=None):
        self.dim = dim
        self.split = split
        self.left = left
        self.right = right
        self.indices = indices


class KDTree:
    """Exact k-nearest-neighbor search over row vectors.

    Median splits on the widest dimension, bucketed leaves, and tie
    breaking by the lower row index everywhere, matching what a stable
    linear scan over (distance, index) would return.
    """

    def __init__(self, points: np.ndarray, leaf_size: int = 16):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a non-empty 2-D array")
        self.points = pts
        self.leaf_size = leaf_size
        self.root = self._build(np.arange(pts.shape[0], dtype=np.int64))

    def _build(self, idx: np.ndarray) -> _Node:
        if idx.size <= self.leaf_size:
            return _Node(indices=idx)
        sub = self.points[idx]
        spread = sub.max(axis=0) - sub.min(axis=0)
        dim = int(np.argmax(spread))
        if spread[dim] == 0.0:
            return _Node(indices=idx)
        order = np.argsort(sub[:, dim], kind="stable")
        half = idx.size // 2
        left, right = idx[order[:half]], idx[order[half:]]
        split = float(self.points[right[0], dim])
        return _Node(dim=dim, split=split, left=self._build(left), right=self._build(right))

    def query(self, vector: np.ndarray, k: int = 2) -> list[tuple[float, int]]:
        """k nearest rows as (squared_distance, index), nearest first."""
        q = np.asarray(vector, dtype=np.float64)
        best: list[tuple[float, int]] = []

        def visit(node: _Node) -> None:
            if node.indices is not None:
                d2 = ((self.points[node.indices] - q) ** 2).sum(axis=1)
                for dist, i in zip(d2, node.indices):
                    cand = (float(dist), int(i))
                    if len(best) < k:
                        best.append(cand)
                        best.sort()
                    elif cand < best[-1]:
                        best[-1] = cand
                        best.sort()
                return
            near, far = (
                (node.left, node.right)
                if q[node.dim] < node.split
                else (node.right, node.left)
            )
            visit(near)
            plane = (q[node.dim] - node.split) ** 2
            if len(best) < k or plane <= best[-1][0]:
                visit(far)

        visit(self.root)
        return best


class DescriptorIndex:
    """KD-tree over the non-degenerate members of a descriptor list."""

    def __init__(self, descriptors: list[Descriptor]):
        usable = [(i, d.values) for i, d in enumerate(descriptors) if not d.is_degenerate]
        if not usable:
            raise EmptyIndexError("no usable descriptors to index")
        self.original_indices = np.array([i for i, _ in usable], dtype=np.int64)
        self.tree = KDTree(np.vstack([v for _, v in usable]))

    @property
    def size(self) -> int:
        return self.original_indices.size

    def query(self, vector: np.ndarray, k: int = 2) -> list[tuple[float, int]]:
        """Nearest neighbors as (L2 distance, original descriptor index)."""
        hits = self.tree.query(vector, k=min(k, self.size))
        return [(math.sqrt(d2), int(self.original_indices[i])) for d2, i in hits]


def build_index(descriptors: list[Descriptor]) -> DescriptorIndex:
    return DescriptorIndex(descriptors)


def match_descriptors(
    index: DescriptorIndex, queries: list[Descriptor], ratio: float = 0.8
) -> list[Correspondence]:
    """Lowe ratio matching: keep the nearest neighbor iff d1/d2 < ratio.

    Degenerate query descriptors are skipped; with a single indexed
    descriptor the second-nearest distance is treated as infinite.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    out: list[Correspondence] = []
    for qi, desc in enumerate(queries):
        if desc.is_degenerate:
            continue
        hits = index.query(desc.values, k=2)
        d1, ref_idx = hits[0]
        d2 = hits[1][0] if len(hits) > 1 else math.inf
        if d2 == 0.0:
            continue  # tied at zero distance: ratio undefined, reject
        if d1 / d2 < ratio:
            out.append(Correspondence(qi, ref_idx, d1))
    return out


def _triangle_area(p: np.ndarray) -> float:
    return 0.5 * abs(
        (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1])
        - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1])
    )


def estimate_affine(pov_pts: np.ndarray, ref_pts: np.ndarray) -> AffineMap:
    """Exact affine map from 3 point pairs (6x6 linear system)."""
    p = np.asarray(pov_pts, dtype=np.float64).reshape(3, 2)
    q = np.asarray(ref_pts, dtype=np.float64).reshape(3, 2)
    if _triangle_area(p) <= 1e-9:
        raise DegenerateSampleError("sample points are collinear")
    a = np.zeros((6, 6))
    b = np.zeros(6)
    for i in range(3):
        x, y = p[i]
        a[2 * i, 0:3] = (x, y, 1.0)
        a[2 * i + 1, 3:6] = (x, y, 1.0)
        b[2 * i] = q[i, 0]
        b[2 * i + 1] = q[i, 1]
    sol = np.linalg.solve(a, b)
    return AffineMap(np.array([[sol[0], sol[1], sol[2]], [sol[3], sol[4], sol[5]]]))


def _fit_least_squares(p: np.ndarray, q: np.ndarray) -> AffineMap:
    design = np.column_stack([p, np.ones(p.shape[0])])
    sol, *_ = np.linalg.lstsq(design, q, rcond=None)
    return AffineMap(sol.T)


def ransac_affine(
    correspondences: list[Correspondence],
    pov_points: np.ndarray,
    ref_points: np.ndarray,
    params: RansacParams,
    f_pov: Point2 | None = None,
) -> MatchResult:
    """Seeded RANSAC over an affine model.

    Samples `iterations` triples (or every 3-subset in exhaustive mode),
    keeps the model with the most inliers at inlier_threshold (ties go
    to the earlier iteration), refits once by least squares on that
    inlier set and recomputes the inliers.
    """
    if len(correspondences) < 3:
        raise InsufficientMatchesError(
            f"need >= 3 correspondences, got {len(correspondences)}"
        )
    pov_points = np.asarray(pov_points, dtype=np.float64)
    ref_points = np.asarray(ref_points, dtype=np.float64)
    p = pov_points[[c.pov_index for c in correspondences]]
    q = ref_points[[c.ref_index for c in correspondences]]
    n = p.shape[0]

    if params.exhaustive:
        triples = itertools.combinations(range(n), 3)
    else:
        rng = np.random.default_rng(np.random.PCG64(params.seed))
        triples = (
            tuple(sorted(rng.choice(n, size=3, replace=False)))
            for _ in range(params.iterations)
        )

    best_count = -1
    best_model: AffineMap | None = None
    for sample in triples:
        idx = list(sample)
        if _triangle_area(p[idx]) <= 1e-9:
            continue
        try:
            model = estimate_affine(p[idx], q[idx])
        except (DegenerateSampleError, ValueError):
            continue
        residuals = np.linalg.norm(model.apply(p) - q, axis=1)
        count = int(np.sum(residuals <= params.inlier_threshold))
        if count > best_count:
            best_count = count
            best_model = model

    if best_model is None or best_count < params.min_inliers:
        raise NoConsensusError(
            f"best consensus {max(best_count, 0)} below min_inliers {params.min_inliers}"
        )

    inliers = np.linalg.norm(best_model.apply(p) - q, axis=1) <= params.inlier_threshold
    try:
        refit = _fit_least_squares(p[inliers], q[inliers])
    except ValueError:
        refit = best_model  # refit collapsed; keep the sample model
    final = np.linalg.norm(refit.apply(p) - q, axis=1) <= params.inlier_threshold
    if int(final.sum()) < params.min_inliers:
        raise NoConsensusError("refit lost consensus below min_inliers")
    f_ref = transfer_focus(refit, f_pov) if f_pov is not None else None
    return MatchResult(
        affine=refit,
        inlier_indices=np.flatnonzero(final),
        f_ref=f_ref,
    )


def transfer_focus(affine: AffineMap, f_pov: Point2) -> Point2:
    """Map the POV focus through the affine: f_ref = A (x, y, 1)^T."""
    out = affine.apply(np.array([[f_pov.x, f_pov.y]]))[0]
    return Point2(float(out[0]), float(out[1]))
