"""Maximally stable extremal region detection.

The detector sweeps intensity thresholds and keeps connected components
whose area change rate is locally minimal. Both polarities are handled:
dark regions grow out of the components of {I <= t} as t rises, bright
regions come from the same sweep on the inverted image.

Thresholds are indexed by the rank of the occupied intensity levels and
the variation window is clamped to each region lineage's own threshold
span. Measured this way the detector is exactly invariant under any
strictly increasing intensity remap: ranks, components, merge order and
windows all come out identical.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from ..imaging import GrayImage, Point2

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


Polarity = Literal["bright", "dark"]


@dataclass
class MserParams:
    """Stability-sweep parameters.

    delta is the half-window of the variation measure, counted in steps
    over the image's occupied intensity levels. max_area is a fraction
    of the image area; min_area is absolute pixels.
    """

    delta: int = 5
    min_area: int = 30
    max_area: float = 0.25
    max_variation: float = 0.5

    def __post_init__(self) -> None:
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.min_area <= 0:
            raise ValueError("min_area must be positive")
        if not 0.0 < self.max_area <= 1.0:
            raise ValueError("max_area must lie in (0, 1]")
        if self.max_variation <= 0:
            raise ValueError("max_variation must be positive")


@dataclass
class InterestRegion:
    """One extremal region at its most stable threshold.

    pixels holds sorted linear indices (y * image_width + x) so region
    sets can be compared exactly; centroid and second_moments are the
    central moments of the pixel coordinates.
    """

    pixel_count: int
    centroid: Point2
    second_moments: np.ndarray
    polarity: Polarity
    representative_intensity: int
    pixels: np.ndarray
    image_width: int
    variation: float = field(default=0.0)

    def pixel_coords(self) -> np.ndarray:
        """(n, 2) array of (x, y) pixel coordinates."""
        ys, xs = np.divmod(self.pixels, self.image_width)
        return np.column_stack([xs, ys])


@_njit(cache=True)
def _find(uf: np.ndarray, a: int) -> int:
    while uf[a] != a:
        uf[a] = uf[uf[a]]
        a = uf[a]
    return a


@_njit(cache=True)
def _build_forest(rank_flat, order, level_starts, width, height, n_levels):
    """Grow components level by level and record the merge forest.

    Returns per-component birth/death/parent arrays, the pixel->birth
    component map, and an event stream of (component, rank, area)
    change points recorded at the end of every level a root was touched.
    """
    n = rank_flat.size
    max_comps = n + 1

    uf = np.empty(max_comps, np.int32)
    area = np.zeros(max_comps, np.int64)
    birth = np.full(max_comps, -1, np.int32)
    death = np.full(max_comps, n_levels, np.int32)
    parent = np.full(max_comps, -1, np.int32)
    last_event = np.full(max_comps, -1, np.int32)
    pixel_comp = np.full(n, -1, np.int32)

    ev_comp = np.empty(2 * n + 16, np.int32)
    ev_rank = np.empty(2 * n + 16, np.int32)
    ev_area = np.empty(2 * n + 16, np.int64)
    n_ev = 0

    touched = np.empty(2 * n + 16, np.int32)
    stack = np.empty(n, np.int64)

    next_comp = 0
    for t in range(n_levels):
        s = level_starts[t]
        e = level_starts[t + 1]
        if s == e:
            continue
        n_touched = 0

        # Label this level's pixels into new components (4-connectivity).
        for oi in range(s, e):
            p = order[oi]
            if pixel_comp[p] != -1:
                continue
            c = next_comp
            next_comp += 1
            uf[c] = c
            birth[c] = t
            cnt = 0
            sp = 0
            stack[sp] = p
            sp += 1
            pixel_comp[p] = c
            while sp > 0:
                sp -= 1
                q = stack[sp]
                cnt += 1
                y = q // width
                x = q - y * width
                if x > 0:
                    r = q - 1
                    if pixel_comp[r] == -1 and rank_flat[r] == t:
                        pixel_comp[r] = c
                        stack[sp] = r
                        sp += 1
                if x < width - 1:
                    r = q + 1
                    if pixel_comp[r] == -1 and rank_flat[r] == t:
                        pixel_comp[r] = c
                        stack[sp] = r
                        sp += 1
                if y > 0:
                    r = q - width
                    if pixel_comp[r] == -1 and rank_flat[r] == t:
                        pixel_comp[r] = c
                        stack[sp] = r
                        sp += 1
                if y < height - 1:
                    r = q + width
                    if pixel_comp[r] == -1 and rank_flat[r] == t:
                        pixel_comp[r] = c
                        stack[sp] = r
                        sp += 1
            area[c] = cnt
            touched[n_touched] = c
            n_touched += 1

        # Union with components from earlier levels; larger area absorbs,
        # ties go to the lower component id.
        for oi in range(s, e):
            p = order[oi]
            y = p // width
            x = p - y * width
            for k in range(4):
                if k == 0:
                    if x == 0:
                        continue
                    r = p - 1
                elif k == 1:
                    if x == width - 1:
                        continue
                    r = p + 1
                elif k == 2:
                    if y == 0:
                        continue
                    r = p - width
                else:
                    if y == height - 1:
                        continue
                    r = p + width
                if rank_flat[r] >= t:
                    continue
                ra = _find(uf, pixel_comp[p])
                rb = _find(uf, pixel_comp[r])
                if ra == rb:
                    continue
                if area[ra] > area[rb] or (area[ra] == area[rb] and ra < rb):
                    win, lose = ra, rb
                else:
                    win, lose = rb, ra
                uf[lose] = win
                parent[lose] = win
                death[lose] = t
                area[win] += area[lose]
                touched[n_touched] = win
                n_touched += 1

        # Record end-of-level areas for every root touched this level.
        for i in range(n_touched):
            r0 = _find(uf, touched[i])
            if last_event[r0] != t:
                last_event[r0] = t
                ev_comp[n_ev] = r0
                ev_rank[n_ev] = t
                ev_area[n_ev] = area[r0]
                n_ev += 1

    return (
        birth[:next_comp],
        death[:next_comp],
        parent[:next_comp],
        pixel_comp,
        ev_comp[:n_ev],
        ev_rank[:n_ev],
        ev_area[:n_ev],
    )


class _Forest:
    """Numpy view over the component forest with area history lookup."""

    def __init__(self, birth, death, parent, pixel_comp, ev_comp, ev_rank, ev_area):
        self.birth = birth
        self.death = death
        self.parent = parent
        self.n_comp = birth.size
        ev_order = np.argsort(ev_comp, kind="stable")
        self._h_rank = ev_rank[ev_order]
        self._h_area = ev_area[ev_order]
        self._h_start = np.searchsorted(ev_comp[ev_order], np.arange(self.n_comp + 1))
        px_order = np.argsort(pixel_comp, kind="stable")
        self._px = px_order
        self._px_start = np.searchsorted(pixel_comp[px_order], np.arange(self.n_comp + 1))
        self.children: list[list[int]] = [[] for _ in range(self.n_comp)]
        for c in range(self.n_comp):
            p = parent[c]
            if p >= 0:
                self.children[p].append(c)

    def area_at(self, c: int, t: int) -> int:
        s, e = self._h_start[c], self._h_start[c + 1]
        i = int(np.searchsorted(self._h_rank[s:e], t, side="right")) - 1
        return int(self._h_area[s + i])

    def history_span(self, c: int) -> tuple[int, int]:
        s, e = self._h_start[c], self._h_start[c + 1]
        if s == e:
            return 0, 0
        return int(self._h_area[s]), int(self._h_area[e - 1])

    def collect_pixels(self, c: int, t: int) -> np.ndarray:
        parts = []
        work = [c]
        while work:
            u = work.pop()
            parts.append(self._px[self._px_start[u] : self._px_start[u + 1]])
            for ch in self.children[u]:
                if self.death[ch] <= t:
                    work.append(ch)
        return np.sort(np.concatenate(parts))


def _stable_candidates(forest: _Forest, params: MserParams, n_levels: int, n_pixels: int):
    """Yield (comp, rank, variation, area) at local variation minima."""
    max_area_px = params.max_area * n_pixels
    delta = params.delta
    out = {}
    for c in range(forest.n_comp):
        dom_lo = int(forest.birth[c])
        dom_hi = min(int(forest.death[c]) - 1, n_levels - 1)
        if dom_hi < dom_lo:
            continue
        first_area, last_area = forest.history_span(c)
        if last_area < params.min_area or first_area > max_area_px:
            continue
        ts = range(dom_lo, dom_hi + 1)
        areas = [forest.area_at(c, t) for t in ts]
        variations = []
        for i, t in enumerate(ts):
            a_lo = forest.area_at(c, max(t - delta, dom_lo))
            a_hi = forest.area_at(c, min(t + delta, dom_hi))
            variations.append((a_hi - a_lo) / areas[i])
        for i, t in enumerate(ts):
            v = variations[i]
            left = variations[i - 1] if i > 0 else np.inf
            right = variations[i + 1] if i + 1 < len(variations) else np.inf
            if v > left or v > right or v > params.max_variation:
                continue
            a = areas[i]
            if not params.min_area <= a <= max_area_px:
                continue
            # Equal-area candidates on one lineage are the same pixel set.
            key = (c, a)
            if key not in out or (v, t) < out[key]:
                out[key] = (v, t)
    return [(c, t, v, a) for (c, a), (v, t) in out.items()]


def _enclosing_chain(forest: _Forest, comp: int, t: int, cand_ts: dict[int, list[tuple[int, int]]]):
    """Walk outward over candidate regions that contain (comp, t)."""
    entries = cand_ts.get(comp, [])
    pos = bisect.bisect_right(entries, (t, np.inf))
    for i in range(pos, len(entries)):
        yield entries[i][1]
    node = comp
    while forest.parent[node] >= 0:
        entry_rank = int(forest.death[node])
        node = int(forest.parent[node])
        entries = cand_ts.get(node, [])
        pos = bisect.bisect_left(entries, (entry_rank, -1))
        for i in range(pos, len(entries)):
            yield entries[i][1]


def _suppress_nested(cands: list[tuple[int, int, float, int]], forest: _Forest) -> list[int]:
    """Drop the less stable of two nested regions of near-equal area.

    Returns surviving indices into cands. A region is compared against
    its nearest enclosing surviving candidate; if their areas differ by
    less than 10% only the lower-variation one is kept (ties keep the
    inner region).
    """
    cand_ts: dict[int, list[tuple[int, int]]] = {}
    for i, (c, t, _v, _a) in enumerate(cands):
        cand_ts.setdefault(c, []).append((t, i))
    for lst in cand_ts.values():
        lst.sort()

    alive = [True] * len(cands)
    order = sorted(range(len(cands)), key=lambda i: (cands[i][3], cands[i][0], cands[i][1]))
    for i in order:
        if not alive[i]:
            continue
        c, t, v, a = cands[i]
        for j in _enclosing_chain(forest, c, t, cand_ts):
            if not alive[j] or j == i:
                continue
            cj, tj, vj, aj = cands[j]
            if (aj - a) < 0.10 * aj:
                if v <= vj:
                    alive[j] = False
                else:
                    alive[i] = False
            break
        # only the nearest enclosing candidate is compared
    return [i for i in range(len(cands)) if alive[i]]


def _detect_polarity(
    work: np.ndarray, polarity: Polarity, params: MserParams
) -> list[InterestRegion]:
    height, width = work.shape
    flat = work.reshape(-1)
    levels, rank_flat = np.unique(flat, return_inverse=True)
    rank_flat = rank_flat.astype(np.int32).reshape(-1)
    n_levels = int(levels.size)
    order = np.argsort(rank_flat, kind="stable").astype(np.int64)
    level_starts = np.searchsorted(
        rank_flat[order], np.arange(n_levels + 1, dtype=np.int32)
    ).astype(np.int64)

    forest = _Forest(
        *_build_forest(rank_flat, order, level_starts, width, height, n_levels)
    )
    cands = _stable_candidates(forest, params, n_levels, flat.size)
    keep = _suppress_nested(cands, forest)

    regions = []
    for i in keep:
        c, t, v, a = cands[i]
        pixels = forest.collect_pixels(c, t)
        ys, xs = np.divmod(pixels, width)
        cx = float(xs.mean())
        cy = float(ys.mean())
        dx = xs - cx
        dy = ys - cy
        moments = np.array(
            [
                [float(np.mean(dx * dx)), float(np.mean(dx * dy))],
                [float(np.mean(dx * dy)), float(np.mean(dy * dy))],
            ]
        )
        level_value = int(levels[t])
        rep = 255 - level_value if polarity == "bright" else level_value
        regions.append(
            InterestRegion(
                pixel_count=int(a),
                centroid=Point2(cx, cy),
                second_moments=moments,
                polarity=polarity,
                representative_intensity=rep,
                pixels=pixels,
                image_width=width,
                variation=float(v),
            )
        )
    return regions


def detect_mser(image: GrayImage, params: MserParams | None = None) -> list[InterestRegion]:
    """Detect maximally stable extremal regions of both polarities.

    Output order is deterministic: bright regions first, then dark,
    each sorted by first pixel index, area and threshold.
    """
    if params is None:
        params = MserParams()
    if image.width < 3 or image.height < 3:
        raise ValueError("detect_mser needs an image of at least 3x3 pixels")

    regions: list[InterestRegion] = []
    pixels = image.pixels
    regions.extend(_detect_polarity(255 - pixels, "bright", params))
    regions.extend(_detect_polarity(pixels, "dark", params))
    regions.sort(
        key=lambda r: (
            0 if r.polarity == "bright" else 1,
            int(r.pixels[0]),
            r.pixel_count,
            r.representative_intensity,
        )
    )
    return regions


def dump_regions(regions: list[InterestRegion], path: str | Path) -> None:
    """Debug dump, one region per line: cx cy area m11 m12 m22 polarity t."""
    lines = []
    for r in regions:
        m = r.second_moments
        lines.append(
            f"{r.centroid.x:.3f} {r.centroid.y:.3f} {r.pixel_count} "
            f"{m[0, 0]:.6f} {m[0, 1]:.6f} {m[1, 1]:.6f} "
            f"{r.polarity} {r.representative_intensity}"
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
