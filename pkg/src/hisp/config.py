"""Run configuration with the tracker's default model parameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .core import DEFAULT_BIRTH_COV, DEFAULT_GATE, BirthModel
from .lingauss import MotionModel, SensorModel
from .management import PruneMergeConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # motion
    sigma_v: float = 5.0
    dt: float = 1.0
    survival_prob: float = 0.99
    # sensor
    sigma_r: float = 6.0
    detection_prob: float = 0.90
    clutter_mean: float = 10.0
    frame_width: float = 1920.0
    frame_height: float = 1080.0
    # birth
    births_per_frame: float = 0.1
    birth_cov_diag: tuple = tuple(float(x) for x in DEFAULT_BIRTH_COV.diagonal())
    birth_likelihood: float = 1.0
    # hypothesis management and extraction
    prune_threshold: float = 1e-3
    merge_distance: float = 4.0
    window: int = 5
    max_hypotheses: int = 10_000_000
    gate_threshold: float = DEFAULT_GATE
    solver_timeout: Optional[float] = 0.5
    extract: bool = True
    # appearance
    appearance: str = "off"
    features: Optional[str] = None
    image_dir: Optional[str] = None
    image_pattern: str = "{frame:06d}.jpg"
    feature_policy: str = "last-match"
    ema_alpha: float = 0.5
    # input and output
    det: Optional[str] = None
    out: Optional[str] = None
    diagnostics: Optional[str] = None
    nms_threshold: Optional[float] = None
    n_frames: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.detection_prob < self.survival_prob:
            raise ConfigError(
                f"detection_prob ({self.detection_prob}) must be smaller than survival_prob "
                f"({self.survival_prob}) for tracks to survive missed detections")
        if self.appearance not in ("off", "precomputed", "histogram"):
            raise ConfigError(f"unknown appearance mode {self.appearance!r}")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if len(self.birth_cov_diag) != 6:
            raise ConfigError("birth_cov_diag needs 6 entries")

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        with Path(path).open("rb") as fh:
            data = tomllib.load(fh)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "birth_cov_diag" in data:
            data = dict(data, birth_cov_diag=tuple(float(x) for x in data["birth_cov_diag"]))
        return cls(**data)

    def with_overrides(self, **overrides) -> "RunConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> dict:
        return asdict(self)

    def motion(self) -> MotionModel:
        return MotionModel.constant_velocity(self.dt, self.sigma_v, self.survival_prob)

    def sensor(self) -> SensorModel:
        return SensorModel.box_sensor(self.sigma_r, self.detection_prob, self.clutter_mean,
                                      self.frame_width, self.frame_height)

    def birth(self) -> BirthModel:
        return BirthModel.uniform(self.births_per_frame, self.frame_width, self.frame_height,
                                  np.diag(self.birth_cov_diag), self.birth_likelihood)

    def prune_merge(self) -> PruneMergeConfig:
        return PruneMergeConfig(self.prune_threshold, self.merge_distance, self.max_hypotheses, self.window)
