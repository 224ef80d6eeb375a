"""Reference dataset management.

A corpus is described by a JSON manifest with a top-level ``entries``
array. Angles are stored in degrees in the file and converted to
radians on load; image paths are resolved relative to the manifest.
Panorama annotations may wrap horizontally by listing x coordinates
beyond the image width.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorpusLoadError, GeoLookupError, ManifestError
from .imaging import GrayImage, Point2, load_image
from .matching import KDTree
from .sensor import FlatGeometry, PanoramaGeometry

EARTH_RADIUS_KM = 6371.0


@dataclass
class GeoPoint:
    lat: float  # degrees
    lon: float  # degrees


@dataclass
class AnnotatedRegion:
    label: str
    polygon: list[Point2]
    info: str = ""

    def area(self) -> float:
        pts = self.polygon
        total = 0.0
        for i in range(len(pts)):
            x1, y1 = pts[i]
            x2, y2 = pts[(i + 1) % len(pts)]
            total += x1 * y2 - x2 * y1
        return abs(total) / 2.0


@dataclass
class ReferenceEntry:
    id: str
    image_path: Path
    kind: str  # "panorama" | "flat"
    geometry: PanoramaGeometry | FlatGeometry
    geo: GeoPoint | None = None
    annotations: list[AnnotatedRegion] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.geometry.width

    @property
    def height(self) -> int:
        return self.geometry.height

    @property
    def heading(self) -> float:
        if isinstance(self.geometry, PanoramaGeometry):
            # panorama faces every way; use the mid-image heading
            return self.geometry.yaw_at_left_edge + math.pi
        return self.geometry.heading

    def load(self) -> GrayImage:
        return load_image(self.image_path, panoramic=self.kind == "panorama")


class Corpus:
    """Immutable set of reference entries with a spatial geo index."""

    def __init__(self, entries: list[ReferenceEntry]):
        self.entries = list(entries)
        self.by_id = {e.id: e for e in self.entries}
        if len(self.by_id) != len(self.entries):
            raise ManifestError("duplicate entry ids in corpus")
        self._geo_entries = [e for e in self.entries if e.geo is not None]
        self._geo_tree: KDTree | None = None
        if self._geo_entries:
            vectors = np.array(
                [_unit_vector(e.geo.lat, e.geo.lon) for e in self._geo_entries]
            )
            self._geo_tree = KDTree(vectors, leaf_size=8)
        self._image_cache: dict[str, GrayImage] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def entry(self, entry_id: str) -> ReferenceEntry:
        try:
            return self.by_id[entry_id]
        except KeyError:
            raise CorpusLoadError(f"no corpus entry with id {entry_id!r}") from None

    def image(self, entry_id: str) -> GrayImage:
        if entry_id not in self._image_cache:
            self._image_cache[entry_id] = self.entry(entry_id).load()
        return self._image_cache[entry_id]


def _unit_vector(lat_deg: float, lon_deg: float) -> tuple[float, float, float]:
    lat = math.radians(lat_deg)
    lon = math.radians(lon_deg)
    return (
        math.cos(lat) * math.cos(lon),
        math.cos(lat) * math.sin(lon),
        math.sin(lat),
    )


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in kilometres (inputs in degrees)."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dphi = p2 - p1
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def nearest_reference(corpus: Corpus, lat: float, lon: float) -> ReferenceEntry:
    """Geo-tagged entry minimizing haversine distance; ties pick the
    lexicographically smallest id."""
    if corpus._geo_tree is None:
        raise GeoLookupError("corpus has no geo-tagged entries")
    hits = corpus._geo_tree.query(
        np.array(_unit_vector(lat, lon)), k=min(8, len(corpus._geo_entries))
    )
    best: tuple[float, str, ReferenceEntry] | None = None
    for _, i in hits:
        entry = corpus._geo_entries[i]
        dist = haversine_km(lat, lon, entry.geo.lat, entry.geo.lon)
        key = (dist, entry.id, entry)
        if best is None or key[:2] < best[:2]:
            best = key
    return best[2]


def nearest_references(corpus: Corpus, lat: float, lon: float, count: int) -> list[ReferenceEntry]:
    """The `count` geo-nearest entries, nearest first (haversine, then id)."""
    if not corpus._geo_entries:
        raise GeoLookupError("corpus has no geo-tagged entries")
    ranked = sorted(
        corpus._geo_entries,
        key=lambda e: (haversine_km(lat, lon, e.geo.lat, e.geo.lon), e.id),
    )
    return ranked[:count]


def _on_segment(px: float, py: float, x1: float, y1: float, x2: float, y2: float) -> bool:
    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    if abs(cross) > 1e-9 * max(1.0, abs(x2 - x1) + abs(y2 - y1)):
        return False
    return (
        min(x1, x2) - 1e-9 <= px <= max(x1, x2) + 1e-9
        and min(y1, y2) - 1e-9 <= py <= max(y1, y2) + 1e-9
    )


def point_in_polygon(point: Point2, polygon: list[Point2]) -> bool:
    """Even-odd containment; points on the boundary count as inside."""
    x, y = point
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        if _on_segment(x, y, x1, y1, x2, y2):
            return True
    inside = False
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xi:
                inside = not inside
    return inside


def _segments_cross(a1, a2, b1, b2) -> bool:
    def orient(p, q, r):
        v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        if abs(v) < 1e-12:
            return 0
        return 1 if v > 0 else -1

    o1, o2 = orient(a1, a2, b1), orient(a1, a2, b2)
    o3, o4 = orient(b1, b2, a1), orient(b1, b2, a2)
    if o1 != o2 and o3 != o4:
        return True
    for p, q, r in ((a1, a2, b1), (a1, a2, b2), (b1, b2, a1), (b1, b2, a2)):
        if orient(p, q, r) == 0 and _on_segment(r[0], r[1], p[0], p[1], q[0], q[1]):
            return True
    return False


def polygon_is_simple(polygon: list[Point2]) -> bool:
    n = len(polygon)
    if n < 3:
        return False
    edges = [(polygon[i], polygon[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        a1, a2 = edges[i]
        if a1 == a2:
            return False
        for j in range(i + 1, n):
            if j == i or (j - i) % n == 1 or (i - j) % n == 1:
                continue  # adjacent edges share a vertex by construction
            b1, b2 = edges[j]
            if _segments_cross(a1, a2, b1, b2):
                return False
    return True


def annotation_at(entry: ReferenceEntry, f: Point2) -> AnnotatedRegion | None:
    """Annotation whose polygon contains f; overlaps pick the smallest
    polygon. Panorama polygons are also tested one wrap to the right."""
    probes = [f]
    if entry.kind == "panorama":
        probes.append(Point2(f.x + entry.width, f.y))
    hits = []
    for region in entry.annotations:
        if any(point_in_polygon(p, region.polygon) for p in probes):
            hits.append(region)
    if not hits:
        return None
    return min(hits, key=lambda r: (r.area(), r.label))


def _geometry_from_manifest(kind: str, data: dict, width: int, height: int):
    if kind == "panorama":
        return PanoramaGeometry(
            width=width,
            height=height,
            yaw_at_left_edge=math.radians(float(data.get("yaw_at_left_edge_deg", 0.0))),
        )
    if kind == "flat":
        return FlatGeometry(
            width=width,
            height=height,
            heading=math.radians(float(data.get("heading_deg", 0.0))),
            pitch=math.radians(float(data.get("pitch_deg", 0.0))),
            hfov=math.radians(float(data.get("hfov_deg", 90.0))),
        )
    raise ManifestError(f"unknown entry kind {kind!r}")


def _read_image_size(path: Path) -> tuple[int, int]:
    try:
        blob = path.open("rb").read(64)
    except OSError as exc:
        raise CorpusLoadError(str(exc)) from exc
    if blob[:2] in (b"P2", b"P3", b"P5", b"P6"):
        from .imaging import _read_pnm_tokens

        (w, h, _max), _ = _read_pnm_tokens(path.read_bytes(), 3, 2)
        return w, h
    from PIL import Image as PILImage

    with PILImage.open(path) as img:
        return img.size


def load_corpus(manifest_path: str | Path) -> Corpus:
    """Parse and validate a manifest; errors name the offending entry."""
    manifest_path = Path(manifest_path)
    try:
        raw = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("entries", None), list):
        raise ManifestError("manifest must be an object with an 'entries' array")

    base = manifest_path.parent
    entries = []
    seen = set()
    for item in raw["entries"]:
        entry_id = item.get("id")
        if not entry_id or not isinstance(entry_id, str):
            raise ManifestError("every entry needs a string id")
        if entry_id in seen:
            raise ManifestError(f"duplicate entry id {entry_id!r}")
        seen.add(entry_id)
        try:
            image_path = (base / item["image_path"]).resolve()
            width, height = _read_image_size(image_path)
            kind = item.get("kind", "flat")
            geometry = _geometry_from_manifest(kind, item.get("geometry", {}), width, height)
            geo = None
            if item.get("geo") is not None:
                geo = GeoPoint(float(item["geo"]["lat"]), float(item["geo"]["lon"]))
            annotations = []
            for ann in item.get("annotations", []):
                polygon = [Point2(float(x), float(y)) for x, y in ann["polygon"]]
                if not polygon_is_simple(polygon):
                    raise ManifestError(f"annotation polygon {ann.get('label')!r} is not simple")
                annotations.append(
                    AnnotatedRegion(
                        label=str(ann["label"]),
                        polygon=polygon,
                        info=str(ann.get("info", "")),
                    )
                )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusLoadError(f"entry {entry_id!r}: {exc}") from exc
        except (CorpusLoadError, ManifestError) as exc:
            raise CorpusLoadError(f"entry {entry_id!r}: {exc}") from exc
        entries.append(
            ReferenceEntry(
                id=entry_id,
                image_path=image_path,
                kind=kind,
                geometry=geometry,
                geo=geo,
                annotations=annotations,
            )
        )
    return Corpus(entries)


def save_manifest(corpus: Corpus, manifest_path: str | Path) -> None:
    """Write a manifest that loads back to an equal corpus."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    items = []
    for e in corpus.entries:
        try:
            rel = e.image_path.relative_to(base.resolve())
            path_str = str(rel)
        except ValueError:
            path_str = str(e.image_path)
        geometry: dict[str, float] = {}
        if isinstance(e.geometry, PanoramaGeometry):
            geometry["yaw_at_left_edge_deg"] = math.degrees(e.geometry.yaw_at_left_edge)
        else:
            geometry["heading_deg"] = math.degrees(e.geometry.heading)
            geometry["pitch_deg"] = math.degrees(e.geometry.pitch)
            geometry["hfov_deg"] = math.degrees(e.geometry.hfov)
        item: dict = {
            "id": e.id,
            "image_path": path_str,
            "kind": e.kind,
            "geometry": geometry,
        }
        if e.geo is not None:
            item["geo"] = {"lat": e.geo.lat, "lon": e.geo.lon}
        if e.annotations:
            item["annotations"] = [
                {
                    "label": a.label,
                    "polygon": [[p.x, p.y] for p in a.polygon],
                    "info": a.info,
                }
                for a in e.annotations
            ]
        items.append(item)
    manifest_path.write_text(json.dumps({"entries": items}, indent=2) + "\n")
