"""Synthetic POV/reference pairs with exact ground truth.

The reference is rendered procedurally; the POV frame is an affine
resampling of it plus brightness shift, Gaussian noise and occluding
blobs. The sensor trace stores the true head orientation perturbed by a
linear drift, so evaluation can compare vision-only, sensor-only and
blended localization against the known focus.

Texture families: "glyphs" (discriminative shapes), "blobs" (smooth
random structure) and "checker" (repetitive grid that defeats local
matching and exercises the sensor path).
"""

from __future__ import annotations

import dataclasses
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EvaluationError
from .imaging import GrayImage, Point2, save_image
from .matching import AffineMap
from .pipeline import LocalizationResult
from .sensor import (
    EulerAngles,
    FlatGeometry,
    HeadPose,
    PanoramaGeometry,
    SensorTrace,
    rotation_from_euler,
    save_sensor_trace,
)

TEXTURES = ("glyphs", "blobs", "checker")


@dataclass
class SceneSpec:
    seed: int = 0
    texture: str = "glyphs"
    ref_width: int = 512
    ref_height: int = 256
    ref_kind: str = "panorama"  # "panorama" | "flat"
    clutter: float = 0.5

    def __post_init__(self) -> None:
        if self.texture not in TEXTURES:
            raise ValueError(f"texture must be one of {TEXTURES}")
        if not 0.0 <= self.clutter <= 1.0:
            raise ValueError("clutter must lie in [0, 1]")


@dataclass
class TruthParams:
    pov_width: int = 256
    pov_height: int = 192
    brightness_shift: float = 0.0
    noise_sigma: float = 0.0
    occlusion_fraction: float = 0.0
    drift_rate_deg_s: float = 0.0
    frame_time_s: float = 2.0
    reliability: float = 1.0


@dataclass
class GroundTruth:
    affine: AffineMap
    focus: Point2
    pose_trace: list[HeadPose]
    params: TruthParams
    ref_kind: str = "panorama"
    ref_width: int = 0
    ref_height: int = 0


def _smooth_noise(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    """Multi-octave value noise in [0, 1]."""
    out = np.zeros((height, width))
    amplitude = 1.0
    total = 0.0
    for cell in (64, 32, 16):
        gw = max(2, width // cell + 2)
        gh = max(2, height // cell + 2)
        grid = rng.random((gh, gw))
        ys = np.linspace(0, gh - 1.001, height)
        xs = np.linspace(0, gw - 1.001, width)
        gx, gy = np.meshgrid(xs, ys)
        x0 = gx.astype(int)
        y0 = gy.astype(int)
        fx = gx - x0
        fy = gy - y0
        layer = (
            grid[y0, x0] * (1 - fx) * (1 - fy)
            + grid[y0, x0 + 1] * fx * (1 - fy)
            + grid[y0 + 1, x0] * (1 - fx) * fy
            + grid[y0 + 1, x0 + 1] * fx * fy
        )
        out += amplitude * layer
        total += amplitude
        amplitude *= 0.5
    return out / total


def _draw_glyphs(rng: np.random.Generator, canvas: np.ndarray, count: int) -> None:
    height, width = canvas.shape
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(count):
        shape = rng.integers(0, 3)
        cx = rng.uniform(0.05 * width, 0.95 * width)
        cy = rng.uniform(0.05 * height, 0.95 * height)
        size = rng.uniform(0.02, 0.07) * min(width, height) + 4
        value = float(rng.integers(0, 256))
        if shape == 0:  # rectangle
            w2 = size * rng.uniform(0.6, 1.6)
            mask = (np.abs(xx - cx) <= w2) & (np.abs(yy - cy) <= size)
        elif shape == 1:  # ellipse
            a = size * rng.uniform(0.7, 1.5)
            mask = ((xx - cx) / a) ** 2 + ((yy - cy) / size) ** 2 <= 1.0
        else:  # triangle
            h = size * 1.6
            mask = (np.abs(xx - cx) <= (yy - cy + h) * 0.5) & (np.abs(yy - cy) <= h * 0.5)
        canvas[mask] = value


def render_reference(spec: SceneSpec) -> GrayImage:
    """Deterministic procedural reference image."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xA11CE]))
    w, h = spec.ref_width, spec.ref_height
    if spec.texture == "checker":
        cell = max(24, h // 3)
        yy, xx = np.mgrid[0:h, 0:w]
        board = ((xx // cell + yy // cell) % 2).astype(np.float64)
        canvas = 70.0 + 110.0 * board
        _draw_glyphs(rng, canvas, max(0, int(round(3 * spec.clutter))))
    elif spec.texture == "blobs":
        canvas = 30.0 + 200.0 * _smooth_noise(rng, w, h)
        _draw_glyphs(rng, canvas, int(8 + 22 * spec.clutter))
    else:
        canvas = np.full((h, w), 128.0)
        canvas += 25.0 * (_smooth_noise(rng, w, h) - 0.5)
        _draw_glyphs(rng, canvas, int(20 + 60 * spec.clutter))
    pixels = np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8)
    return GrayImage(pixels, panoramic=spec.ref_kind == "panorama")


def _sample_reference(ref: GrayImage, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sampling that wraps horizontally on panoramas."""
    p = ref.pixels.astype(np.float64)
    h, w = p.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    fy = ys - y0
    if ref.panoramic:
        xs = np.mod(xs, w)
        x0 = np.floor(xs).astype(np.int64)
        x1 = np.mod(x0 + 1, w)
        fx = xs - x0
    else:
        xs = np.clip(xs, 0.0, w - 1.0)
        x0 = np.floor(xs).astype(np.int64)
        x1 = np.minimum(x0 + 1, w - 1)
        fx = xs - x0
    top = p[y0, x0] * (1 - fx) + p[y0, x1] * fx
    bot = p[y1, x0] * (1 - fx) + p[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _geometry_for(spec: SceneSpec, ref: GrayImage) -> PanoramaGeometry | FlatGeometry:
    if spec.ref_kind == "panorama":
        return PanoramaGeometry(ref.width, ref.height, yaw_at_left_edge=0.0)
    return FlatGeometry(ref.width, ref.height, heading=0.0)


def _angles_for_focus(
    focus: Point2, geometry: PanoramaGeometry | FlatGeometry, roll: float
) -> EulerAngles:
    """Head orientation whose projection lands exactly on ``focus``."""
    if isinstance(geometry, PanoramaGeometry):
        yaw = geometry.yaw_at_left_edge + 2.0 * math.pi * focus.x / geometry.width
        pitch = math.pi * (0.5 - focus.y / geometry.height)
    else:
        tan_h = math.tan(geometry.hfov / 2.0)
        tan_v = tan_h * geometry.height / geometry.width
        half_w = geometry.width / 2.0
        half_h = geometry.height / 2.0
        yaw = geometry.heading + math.atan((focus.x - half_w) * tan_h / half_w)
        pitch = geometry.pitch + math.atan((half_h - focus.y) * tan_v / half_h)
    if yaw > math.pi:
        yaw -= 2.0 * math.pi
    return EulerAngles(yaw, pitch, roll)


def generate_pair(
    spec: SceneSpec, params: TruthParams | None = None
) -> tuple[GrayImage, GrayImage, SensorTrace, GroundTruth]:
    """Render one POV/reference pair with its sensor trace and truth."""
    params = params or TruthParams()
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xB0B]))
    ref = render_reference(spec)
    w, h = ref.width, ref.height
    pw, ph = params.pov_width, params.pov_height

    # Linear part: rotation, mild anisotropic scale.
    angle = rng.uniform(-0.18, 0.18)
    scale = rng.uniform(0.85, 1.15)
    aniso = rng.uniform(0.92, 1.08)
    ca, sa = math.cos(angle), math.sin(angle)
    lin = np.array([[ca, -sa], [sa, ca]]) @ np.diag([scale, scale * aniso])

    # The warped POV footprint must stay inside the reference vertically
    # (and horizontally for flat references).
    corners = np.array(
        [[0, 0], [pw - 1, 0], [0, ph - 1], [pw - 1, ph - 1]], dtype=np.float64
    )
    centre = np.array([(pw - 1) / 2.0, (ph - 1) / 2.0])
    spread = (corners - centre) @ lin.T
    pad = 4.0
    y_lo = -spread[:, 1].min() + pad
    y_hi = h - 1 - spread[:, 1].max() - pad
    if spec.ref_kind == "panorama":
        fx = rng.uniform(0, w)
    else:
        x_lo = -spread[:, 0].min() + pad
        x_hi = w - 1 - spread[:, 0].max() - pad
        fx = rng.uniform(x_lo, x_hi)
    fy = rng.uniform(y_lo, y_hi)

    offset = np.array([fx, fy]) - lin @ centre
    affine = AffineMap(np.column_stack([lin, offset]))
    focus = Point2(*affine.apply(centre)[0])

    yy, xx = np.mgrid[0:ph, 0:pw].astype(np.float64)
    mapped = np.stack([xx, yy], axis=-1).reshape(-1, 2) @ lin.T + offset
    pov_vals = _sample_reference(
        ref, mapped[:, 0].reshape(ph, pw), mapped[:, 1].reshape(ph, pw)
    )

    shift = rng.uniform(-params.brightness_shift, params.brightness_shift)
    pov_vals = pov_vals + shift
    if params.noise_sigma > 0:
        pov_vals = pov_vals + rng.normal(0.0, params.noise_sigma, pov_vals.shape)
    occluded = rng.uniform(0.0, params.occlusion_fraction)
    area_target = occluded * pw * ph
    covered = 0.0
    gy, gx = np.mgrid[0:ph, 0:pw]
    while covered < area_target:
        a = rng.uniform(0.05, 0.16) * pw
        b = rng.uniform(0.05, 0.16) * ph
        cx = rng.uniform(0, pw)
        cy = rng.uniform(0, ph)
        mask = ((gx - cx) / a) ** 2 + ((gy - cy) / b) ** 2 <= 1.0
        pov_vals[mask] = float(rng.integers(0, 256))
        covered += math.pi * a * b
    pov = GrayImage(np.clip(np.floor(pov_vals + 0.5), 0, 255).astype(np.uint8))

    geometry = _geometry_for(spec, ref)
    roll = rng.uniform(-0.08, 0.08)
    true_angles = _angles_for_focus(focus, geometry, roll)
    drift_rate = math.radians(params.drift_rate_deg_s)
    drift_sign = (1.0 if rng.random() < 0.5 else -1.0, 1.0 if rng.random() < 0.5 else -1.0)
    frame_ms = params.frame_time_s * 1000.0

    true_trace: list[HeadPose] = []
    recorded: list[HeadPose] = []
    for t_ms in (0.0, frame_ms / 2.0, frame_ms):
        seconds = t_ms / 1000.0
        dyaw = drift_sign[0] * drift_rate * seconds
        dpitch = drift_sign[1] * 0.3 * drift_rate * seconds
        pitch = max(-math.pi / 2 + 1e-3, min(math.pi / 2 - 1e-3, true_angles.pitch + dpitch))
        drifted = EulerAngles(true_angles.yaw + dyaw, pitch, true_angles.roll)
        true_trace.append(
            HeadPose(t_ms, rotation_from_euler(true_angles), params.reliability)
        )
        recorded.append(HeadPose(t_ms, rotation_from_euler(drifted), params.reliability))

    truth = GroundTruth(
        affine=affine,
        focus=focus,
        pose_trace=true_trace,
        params=params,
        ref_kind=spec.ref_kind,
        ref_width=w,
        ref_height=h,
    )
    return pov, ref, SensorTrace(recorded), truth


def focus_error(estimate: Point2, truth: GroundTruth) -> float:
    """Pixel distance to the true focus, wrap-aware on panoramas."""
    dx = estimate.x - truth.focus.x
    if truth.ref_kind == "panorama" and truth.ref_width > 0:
        w = truth.ref_width
        dx = math.fmod(dx + w / 2.0, w)
        if dx < 0:
            dx += w
        dx -= w / 2.0
    return math.hypot(dx, estimate.y - truth.focus.y)


@dataclass
class AccuracyReport:
    count: int
    radius: float
    within: int
    accuracy: float
    mean_error: float
    median_error: float
    vision_within: int
    vision_accuracy: float
    vision_mean_error: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def evaluate(
    results: dict[str, LocalizationResult],
    truths: dict[str, GroundTruth],
    radius: float,
) -> AccuracyReport:
    """Radius-R accuracy of blended vs vision-only focus estimates.

    An estimate exactly at distance R counts as correct. Records whose
    localization failed entirely (or, for the vision column, fell back
    to sensor-only) count as misses; mean/median errors are over the
    available estimates.
    """
    if set(results) != set(truths):
        missing = set(results) ^ set(truths)
        raise EvaluationError(f"result/truth ids do not align: {sorted(missing)[:5]}")
    if not results:
        raise EvaluationError("nothing to evaluate")
    blended_errors = []
    vision_errors = []
    within = 0
    vision_within = 0
    for key in sorted(results):
        res = results[key]
        truth = truths[key]
        if res.f is not None:
            err = focus_error(res.f, truth)
            blended_errors.append(err)
            if err <= radius:
                within += 1
        if res.f_ref is not None:
            verr = focus_error(res.f_ref, truth)
            vision_errors.append(verr)
            if verr <= radius:
                vision_within += 1
    n = len(results)
    return AccuracyReport(
        count=n,
        radius=radius,
        within=within,
        accuracy=within / n,
        mean_error=float(np.mean(blended_errors)) if blended_errors else math.inf,
        median_error=float(statistics.median(blended_errors)) if blended_errors else math.inf,
        vision_within=vision_within,
        vision_accuracy=vision_within / n,
        vision_mean_error=float(np.mean(vision_errors)) if vision_errors else math.inf,
    )


@dataclass
class DatasetSpec:
    """Parameters of a generated dataset (the --spec file contents)."""

    seed: int = 0
    textures: tuple[str, ...] = TEXTURES
    ref_width: int = 512
    ref_height: int = 256
    ref_kind: str = "panorama"
    clutter: float = 0.5
    pov_width: int = 256
    pov_height: int = 192
    brightness_shift: float = 0.0
    noise_sigma: float = 0.0
    occlusion_fraction: float = 0.0
    drift_rate_deg_s: float = 0.0
    reliability: float = 1.0

    @classmethod
    def from_file(cls, path: str | Path) -> "DatasetSpec":
        data = json.loads(Path(path).read_text())
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown dataset spec keys: {sorted(unknown)}")
        if "textures" in data:
            data["textures"] = tuple(data["textures"])
        return cls(**data)

    def pair_inputs(self, index: int) -> tuple[SceneSpec, TruthParams]:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, index, 0xDA7A]))
        scene = SceneSpec(
            seed=int(rng.integers(0, 2**31)),
            texture=self.textures[index % len(self.textures)],
            ref_width=self.ref_width,
            ref_height=self.ref_height,
            ref_kind=self.ref_kind,
            clutter=self.clutter,
        )
        params = TruthParams(
            pov_width=self.pov_width,
            pov_height=self.pov_height,
            brightness_shift=self.brightness_shift,
            noise_sigma=self.noise_sigma,
            occlusion_fraction=self.occlusion_fraction,
            drift_rate_deg_s=self.drift_rate_deg_s,
            frame_time_s=float(rng.uniform(1.0, 4.0)),
            reliability=self.reliability,
        )
        return scene, params


def write_truth(truth: GroundTruth, radius: float, path: str | Path) -> None:
    m = truth.affine.m.reshape(-1)
    lines = [
        "affine " + " ".join(f"{v:.17g}" for v in m),
        f"focus {truth.focus.x:.17g} {truth.focus.y:.17g}",
        f"radius {radius:.17g}",
        f"ref {truth.ref_kind} {truth.ref_width} {truth.ref_height}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_truth(path: str | Path) -> tuple[GroundTruth, float]:
    fields: dict[str, list[str]] = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if parts:
            fields[parts[0]] = parts[1:]
    m = np.array([float(v) for v in fields["affine"]]).reshape(2, 3)
    focus = Point2(float(fields["focus"][0]), float(fields["focus"][1]))
    radius = float(fields["radius"][0])
    kind, width, height = fields["ref"][0], int(fields["ref"][1]), int(fields["ref"][2])
    truth = GroundTruth(
        affine=AffineMap(m),
        focus=focus,
        pose_trace=[],
        params=TruthParams(),
        ref_kind=kind,
        ref_width=width,
        ref_height=height,
    )
    return truth, radius


def generate_dataset(
    spec: DatasetSpec, count: int, out_dir: str | Path, radius_fraction: float
) -> list[str]:
    """Write ref/pov/sensors/truth files for `count` pairs; returns ids."""
    out = Path(out_dir)
    for sub in ("ref", "pov", "sensors", "truth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    radius = radius_fraction * spec.ref_width
    ids = []
    for i in range(count):
        scene, params = spec.pair_inputs(i)
        pov, ref, trace, truth = generate_pair(scene, params)
        name = f"{i:03d}"
        save_image(ref, out / "ref" / f"{name}.pgm")
        save_image(pov, out / "pov" / f"{name}.pgm")
        save_sensor_trace(trace, out / "sensors" / f"{name}.txt")
        write_truth(truth, radius, out / "truth" / f"{name}.txt")
        ids.append(name)
    return ids
