"""Run configuration: documented defaults, JSON file loading, overrides.

Precedence is flags > config file > defaults; the CLI applies flag
overrides after loading the file. Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import ConfigError


@dataclass
class RunConfig:
    # MSER detection
    mser_delta: int = 5
    mser_min_area: int = 30
    mser_max_area: float = 0.25
    mser_max_variation: float = 0.5

    # Measurement patches / SIFT
    patch_scale_factor: float = 2.0
    patch_size: int = 32

    # Descriptor matching and RANSAC
    match_ratio: float = 0.8
    ransac_iterations: int = 2000
    ransac_inlier_threshold: float = 3.0
    ransac_min_inliers: int = 8
    ransac_seed: int = 7_919
    ransac_exhaustive_max: int = 12

    # Sensor blending
    alpha_max: float = 0.5
    pose_tolerance_ms: float = 100.0
    flat_hfov_deg: float = 90.0

    # GIST scoring
    gist_canonical_size: int = 128
    gist_scales: int = 4
    gist_orientations: int = 8
    gist_grid: int = 4
    score_threshold: float = 0.55
    pano_window_fraction: float = 0.25

    # Joint attention
    joint_tick_ms: int = 1000
    joint_threshold: float = 0.55
    joint_min_duration_ms: int = 3000
    sync_tolerance_ms: float = 500.0

    # Evaluation
    eval_radius_fraction: float = 330.0 / 3584.0

    def scaled_inlier_threshold(self, ref_width: int, ref_height: int) -> float:
        """Inlier threshold in pixels, scaled by reference diagonal / 4096.

        Floored at 1 px so small desk-scale references keep a usable
        tolerance.
        """
        diag = math.hypot(ref_width, ref_height)
        return max(1.0, self.ransac_inlier_threshold * diag / 4096.0)

    def replace(self, **overrides: Any) -> "RunConfig":
        _check_keys(overrides)
        return dataclasses.replace(self, **overrides)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        _check_keys(data)
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def validate(self) -> None:
        if self.mser_delta < 1:
            raise ConfigError("mser_delta must be >= 1")
        if self.mser_min_area <= 0:
            raise ConfigError("mser_min_area must be positive")
        if not 0.0 < self.mser_max_area <= 1.0:
            raise ConfigError("mser_max_area must lie in (0, 1]")
        if self.mser_max_variation <= 0:
            raise ConfigError("mser_max_variation must be positive")
        if not 0.0 < self.match_ratio <= 1.0:
            raise ConfigError("match_ratio must lie in (0, 1]")
        if self.ransac_iterations < 1:
            raise ConfigError("ransac_iterations must be >= 1")
        if self.ransac_inlier_threshold <= 0:
            raise ConfigError("ransac_inlier_threshold must be positive")
        if self.ransac_min_inliers < 3:
            raise ConfigError("ransac_min_inliers must be >= 3")
        if not 0.0 <= self.alpha_max <= 1.0:
            raise ConfigError("alpha_max must lie in [0, 1]")
        if self.patch_size < 16:
            raise ConfigError("patch_size must be >= 16 for SIFT")
        if min(self.gist_scales, self.gist_orientations, self.gist_grid) < 1:
            raise ConfigError("GIST counts must be >= 1")
        if self.score_threshold <= 0:
            raise ConfigError("score_threshold must be positive")


_FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}


def _check_keys(data: dict[str, Any]) -> None:
    unknown = set(data) - _FIELD_NAMES
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
