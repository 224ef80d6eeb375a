"""Head-orientation handling: Euler angles, projection, focus blending.

Rotation matrices are device-to-world; the Euler convention is
intrinsic Z-Y-X (yaw about world z, then pitch, then roll), so
R = Rz(yaw) @ Ry(pitch) @ Rx(roll). At gimbal lock the roll is fixed
to 0 and yaw absorbs the free angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import InvalidRotationError, ParameterError
from .imaging import Point2

TWO_PI = 2.0 * math.pi


class EulerAngles(NamedTuple):
    yaw: float  # (-pi, pi]
    pitch: float  # [-pi/2, pi/2]
    roll: float  # (-pi, pi]


@dataclass
class HeadPose:
    """Timestamped absolute orientation with a [0, 1] reliability."""

    timestamp_ms: float
    rotation: np.ndarray
    reliability: float = 1.0

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise InvalidRotationError("rotation must be a 3x3 matrix")
        _check_rotation(r)
        if not 0.0 <= self.reliability <= 1.0:
            raise ParameterError("reliability must lie in [0, 1]")
        self.rotation = r


@dataclass
class PanoramaGeometry:
    """Equirectangular reference spanning 2*pi x pi."""

    width: int
    height: int
    yaw_at_left_edge: float = 0.0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("panorama dimensions must be >= 1")


@dataclass
class FlatGeometry:
    """Pinhole reference: camera heading plus a horizontal field of view."""

    width: int
    height: int
    heading: float = 0.0
    pitch: float = 0.0
    hfov: float = field(default=math.radians(90.0))

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not 0.0 < self.hfov < math.pi:
            raise ValueError("hfov must lie in (0, pi)")


def _check_rotation(r: np.ndarray, tol: float = 1e-6) -> None:
    if not np.all(np.isfinite(r)):
        raise InvalidRotationError("rotation entries must be finite")
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol:
        raise InvalidRotationError("matrix is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise InvalidRotationError("matrix determinant is not +1")


def rotation_from_euler(angles: EulerAngles) -> np.ndarray:
    """Recompose R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cy, sy = math.cos(angles.yaw), math.sin(angles.yaw)
    cp, sp = math.cos(angles.pitch), math.sin(angles.pitch)
    cr, sr = math.cos(angles.roll), math.sin(angles.roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def euler_from_rotation(rotation: np.ndarray) -> EulerAngles:
    """Decompose a rotation into intrinsic Z-Y-X Euler angles.

    Within 1e-6 of gimbal lock (|pitch| = pi/2) the pitch snaps to
    exactly +/-pi/2, roll is set to 0 and yaw takes the remaining angle.
    """
    r = np.asarray(rotation, dtype=np.float64)
    if r.shape != (3, 3):
        raise InvalidRotationError("rotation must be a 3x3 matrix")
    _check_rotation(r)
    s = -float(r[2, 0])
    if 1.0 - abs(s) < 1e-12:
        # R reduces to a pure yaw in row 0/1 once roll is pinned to zero
        pitch = math.copysign(math.pi / 2.0, s)
        yaw = math.atan2(-r[0, 1], r[1, 1])
        return EulerAngles(_wrap_pi(yaw), pitch, 0.0)
    pitch = math.asin(s)
    yaw = math.atan2(r[1, 0], r[0, 0])
    roll = math.atan2(r[2, 1], r[2, 2])
    return EulerAngles(_wrap_pi(yaw), pitch, _wrap_pi(roll))


def _wrap_pi(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, TWO_PI)
    if wrapped <= 0.0:
        wrapped += TWO_PI
    return wrapped - math.pi


def _wrap_positive(angle: float) -> float:
    """Wrap to [0, 2*pi)."""
    wrapped = math.fmod(angle, TWO_PI)
    return wrapped + TWO_PI if wrapped < 0.0 else wrapped


def project_pose(pose: HeadPose, geometry: PanoramaGeometry | FlatGeometry) -> Point2:
    """Sensor-predicted focus point on the reference image.

    Equirectangular panoramas map yaw linearly across the width and
    pitch across the height; flat references use the pinhole model
    around the camera heading with the configured field of view.
    """
    angles = euler_from_rotation(pose.rotation)
    if isinstance(geometry, PanoramaGeometry):
        x = geometry.width * _wrap_positive(angles.yaw - geometry.yaw_at_left_edge) / TWO_PI
        x = math.fmod(x, geometry.width)
        y = geometry.height * (0.5 - angles.pitch / math.pi)
        return Point2(x, _clamp(y, 0.0, geometry.height - 1.0))
    dyaw = _wrap_pi(angles.yaw - geometry.heading)
    dpitch = angles.pitch - geometry.pitch
    half_w = geometry.width / 2.0
    half_h = geometry.height / 2.0
    tan_h = math.tan(geometry.hfov / 2.0)
    tan_v = tan_h * geometry.height / geometry.width
    limit = math.pi / 2.0 - 1e-6
    x = half_w + half_w * math.tan(_clamp(dyaw, -limit, limit)) / tan_h
    y = half_h - half_h * math.tan(_clamp(dpitch, -limit, limit)) / tan_v
    return Point2(
        _clamp(x, 0.0, geometry.width - 1.0), _clamp(y, 0.0, geometry.height - 1.0)
    )


def _clamp(v: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, v))


def blend_focus(
    f_s: Point2,
    f_ref: Point2,
    alpha: float,
    panorama_width: int | None = None,
) -> Point2:
    """Convex blend f = alpha * f_s + (1 - alpha) * f_ref.

    On panoramic references the x components combine along the shorter
    wrap-around arc and the result is reduced modulo the width.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    y = alpha * f_s.y + (1.0 - alpha) * f_ref.y
    if panorama_width is None:
        return Point2(alpha * f_s.x + (1.0 - alpha) * f_ref.x, y)
    w = float(panorama_width)
    dx = math.fmod(f_s.x - f_ref.x + w / 2.0, w)
    if dx < 0.0:
        dx += w
    dx -= w / 2.0
    x = math.fmod(f_ref.x + alpha * dx, w)
    if x < 0.0:
        x += w
    return Point2(x, y)


def alpha_from_reliability(reliability: float, alpha_max: float = 0.5) -> float:
    """Linear sensor-confidence weighting, alpha = alpha_max * reliability."""
    if not 0.0 <= reliability <= 1.0:
        raise ParameterError("reliability must lie in [0, 1]")
    return alpha_max * reliability


@dataclass
class SensorTrace:
    """Timestamp-ordered pose records loaded from a trace file."""

    poses: list[HeadPose]

    def nearest(self, timestamp_ms: float, tolerance_ms: float = 100.0) -> HeadPose | None:
        """Pose nearest in time, or None when none lands within tolerance."""
        if not self.poses:
            return None
        times = [p.timestamp_ms for p in self.poses]
        i = int(np.searchsorted(times, timestamp_ms))
        best = None
        for j in (i - 1, i):
            if 0 <= j < len(self.poses):
                cand = self.poses[j]
                gap = abs(cand.timestamp_ms - timestamp_ms)
                if gap <= tolerance_ms and (best is None or gap < best[0]):
                    best = (gap, cand)
        return best[1] if best else None


def load_sensor_trace(path: str | Path) -> SensorTrace:
    """Parse a trace file: ``t_ms r11 .. r33 reliability`` per line.

    Timestamps must be non-decreasing; blank lines and # comments are
    skipped.
    """
    poses: list[HeadPose] = []
    prev_t = -math.inf
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 11:
            raise ValueError(f"{path}:{ln}: expected 11 fields, got {len(parts)}")
        values = [float(v) for v in parts]
        t = values[0]
        if t < prev_t:
            raise ValueError(f"{path}:{ln}: timestamps must be non-decreasing")
        prev_t = t
        rotation = np.array(values[1:10]).reshape(3, 3)
        poses.append(HeadPose(t, rotation, values[10]))
    return SensorTrace(poses)


def save_sensor_trace(trace: SensorTrace, path: str | Path) -> None:
    lines = []
    for p in trace.poses:
        cells = " ".join(f"{v:.12g}" for v in p.rotation.reshape(-1))
        lines.append(f"{p.timestamp_ms:.12g} {cells} {p.reliability:.12g}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
