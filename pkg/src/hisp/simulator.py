"""Synthetic scenarios: ground truth, detections and appearance features.

Random streams (motion, detection, measurement noise, clutter, appearance)
come from independent children of one ``numpy.random.SeedSequence`` so the
output is reproducible bit-for-bit for a seed, and changing e.g. the clutter
rate does not perturb target motion.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .appearance import color_histogram, write_feature_table
from .lingauss import MotionModel, SensorModel
from .motio import Detection, TrackSet, write_detections, write_tracks

MIN_SIZE = 4.0
NOISE_TILE = 512


@dataclass(frozen=True)
class TargetSpec:
    birth: int
    death: int
    initial_state: tuple  # [cx, cy, vx, vy, w, h]
    color: Optional[tuple] = None  # RGB used for the synthetic appearance patch
    # scripted velocity changes: (frame, vx, vy) applied before motion noise
    maneuvers: tuple = ()


@dataclass(frozen=True)
class ScenarioSpec:
    targets: tuple
    n_frames: int = 200
    frame_width: float = 1920.0
    frame_height: float = 1080.0
    sigma_v: float = 0.2
    sigma_r: float = 6.0
    detection_prob: float = 0.95
    clutter_mean: float = 2.0
    seed: int = 0
    patch_size: int = 8
    color_noise: float = 12.0
    clutter_size: tuple = (20.0, 120.0)

    def __post_init__(self):
        for t in self.targets:
            if not 1 <= t.birth <= t.death:
                raise ValueError(f"target must be born before it dies: {t}")

    @property
    def has_features(self) -> bool:
        return any(t.color is not None for t in self.targets)


@dataclass
class Scenario:
    spec: ScenarioSpec
    truth: TrackSet
    detections: dict  # frame -> list[Detection]
    features: dict = field(default_factory=dict)  # (frame, det_index) -> vector
    origins: dict = field(default_factory=dict)  # (frame, det_index) -> target label or 0 for clutter
    # frame -> [(center box, RGB)] of everything visible, for rendering images
    scene: dict = field(default_factory=dict, repr=False)

    def _noise_tile(self) -> np.ndarray:
        tile = self.__dict__.get("_tile")
        if tile is None:
            rng = np.random.default_rng([self.spec.seed, 0])
            tile = (self.spec.color_noise * rng.standard_normal((NOISE_TILE, NOISE_TILE, 3))).astype(np.float32)
            self.__dict__["_tile"] = tile
        return tile

    def render_frame(self, frame: int, background: int = 128) -> np.ndarray:
        """Synthetic RGB image: flat background with one noisy colored box per object.

        Pixel noise is a window of a per-scenario noise tile at an offset seeded
        by (scenario seed, frame), so rendering is repeatable and independent of
        the order frames are requested in.
        """
        W, H = int(self.spec.frame_width), int(self.spec.frame_height)
        img = np.full((H, W, 3), background, dtype=np.uint8)
        rng = np.random.default_rng([self.spec.seed, frame])
        tile = self._noise_tile()
        for box, color in self.scene.get(frame, []):
            cx, cy, w, h = box
            x0, x1 = (int(min(max(v, 0), W)) for v in (cx - w / 2, cx + w / 2))
            y0, y1 = (int(min(max(v, 0), H)) for v in (cy - h / 2, cy + h / 2))
            bh, bw = y1 - y0, x1 - x0
            if bh <= 0 or bw <= 0:
                continue
            if bh <= NOISE_TILE and bw <= NOISE_TILE:
                oy, ox = rng.integers(0, NOISE_TILE - bh + 1), rng.integers(0, NOISE_TILE - bw + 1)
                px = tile[oy:oy + bh, ox:ox + bw] + np.asarray(color, dtype=np.float32)
            else:
                px = np.asarray(color, dtype=float) + self.spec.color_noise * rng.standard_normal((bh, bw, 3))
            img[y0:y1, x0:x1] = np.clip(np.rint(px), 0, 255)
        return img

    def write(self, directory) -> dict:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {"det": directory / "det.txt", "gt": directory / "gt.txt"}
        write_detections(self.detections, paths["det"])
        write_tracks(self.truth, paths["gt"])
        if self.features:
            paths["features"] = directory / "features.csv"
            write_feature_table(self.features, paths["features"])
        return paths


def _patch_feature(rng: np.random.Generator, color, size: int, noise: float) -> np.ndarray:
    base = np.asarray(color, dtype=float)
    px = base + noise * rng.standard_normal((size, size, 3))
    return color_histogram(np.clip(np.rint(px), 0, 255).astype(np.uint8))


def simulate(spec: ScenarioSpec) -> Scenario:
    streams = [np.random.Generator(np.random.PCG64(s))
               for s in np.random.SeedSequence(spec.seed).spawn(5)]
    motion_rng, detect_rng, noise_rng, clutter_rng, app_rng = streams
    motion = MotionModel.constant_velocity(1.0, spec.sigma_v)
    sensor = SensorModel.box_sensor(spec.sigma_r, 0.5, 1.0, spec.frame_width, spec.frame_height)
    q_chol = np.linalg.cholesky(motion.Q + 1e-12 * np.eye(6))
    W, H = spec.frame_width, spec.frame_height

    truth = TrackSet()
    detections: dict[int, list[Detection]] = {}
    features: dict = {}
    origins: dict = {}
    scene: dict = {}
    states: dict[int, np.ndarray] = {}

    for t in range(1, spec.n_frames + 1):
        frame_meas = []
        visible = []
        for k, tgt in enumerate(spec.targets):
            if not tgt.birth <= t <= tgt.death:
                continue
            if t == tgt.birth:
                x = np.asarray(tgt.initial_state, dtype=float)
            else:
                x = motion.F @ states[k] + q_chol @ motion_rng.standard_normal(6)
                for f, vx, vy in tgt.maneuvers:
                    if f == t:
                        x[2:4] = (vx, vy)
            x[4:] = np.maximum(x[4:], MIN_SIZE)
            states[k] = x
            inside = 0.0 <= x[0] < W and 0.0 <= x[1] < H
            detected = detect_rng.random() < spec.detection_prob
            noise = noise_rng.standard_normal(4)
            if not inside:
                continue
            truth.add(t, k + 1, x[[0, 1, 4, 5]])
            if tgt.color is not None:
                visible.append((tuple(x[[0, 1, 4, 5]]), tuple(tgt.color)))
            if not detected:
                continue
            z = sensor.H @ x + spec.sigma_r * noise
            z[2:] = np.maximum(z[2:], 1.0)
            if not (0.0 <= z[0] < W and 0.0 <= z[1] < H):
                continue
            feat = (_patch_feature(app_rng, tgt.color, spec.patch_size, spec.color_noise)
                    if tgt.color is not None else None)
            frame_meas.append((z, k + 1, feat))

        n_clutter = clutter_rng.poisson(spec.clutter_mean)
        for _ in range(n_clutter):
            cx = clutter_rng.uniform(0, W)
            cy = clutter_rng.uniform(0, H)
            w = clutter_rng.uniform(*spec.clutter_size)
            h = w * clutter_rng.uniform(1.0, 3.0)
            color = clutter_rng.integers(0, 256, size=3)
            feat = (_patch_feature(app_rng, color, spec.patch_size, spec.color_noise)
                    if spec.has_features else None)
            frame_meas.append((np.array([cx, cy, w, h]), 0, feat))
            visible.append(((cx, cy, w, h), tuple(int(c) for c in color)))
        if visible:
            # clutter is drawn first so targets stay on top
            scene[t] = visible[len(visible) - n_clutter:] + visible[:len(visible) - n_clutter]

        order = detect_rng.permutation(len(frame_meas))
        dets = []
        for idx, o in enumerate(order):
            z, origin, feat = frame_meas[o]
            dets.append(Detection.from_center(t, z, 1.0, idx, feat))
            origins[(t, idx)] = origin
            if feat is not None:
                features[(t, idx)] = feat
        if dets:
            detections[t] = dets
    return Scenario(spec, truth, detections, features, origins, scene)


_PALETTE = [(220, 30, 30), (30, 30, 220), (30, 200, 30), (230, 200, 20), (200, 30, 200),
            (20, 200, 200), (240, 120, 20), (120, 60, 20)]


def preset(name: str, seed: int = 0, **overrides) -> ScenarioSpec:
    """Named scenarios: ``easy``, ``hard``, ``crossing`` and ``default``."""
    if name == "easy":
        targets = tuple(
            TargetSpec(1, 200, (250.0 + 340.0 * k, 300.0 + 250.0 * (k % 2), 0.6 - 0.1 * k, 0.3 - 0.2 * (k % 2),
                                50.0 + 5 * k, 120.0 + 10 * k), _PALETTE[k])
            for k in range(5))
        spec = ScenarioSpec(targets, n_frames=200, detection_prob=0.95, clutter_mean=2.0, sigma_r=6.0,
                            sigma_v=0.05, seed=seed)
    elif name in ("hard", "crossing"):
        # two equal-sized targets that meet and turn back, twice: constant-velocity
        # motion favours the crossing, so only appearance tells them apart
        period, speed = 60, 2.5
        turns = tuple(range(1 + period, 200, period))
        targets = tuple(
            TargetSpec(1, 200, (400.0, 390.0 + 300.0 * k, 3.0, speed * (1 - 2 * k), 50.0, 120.0),
                       _PALETTE[k],
                       tuple((f, 3.0, speed * (1 - 2 * k) * (-1) ** (i + 1)) for i, f in enumerate(turns)))
            for k in range(2))
        spec = ScenarioSpec(targets, n_frames=200, detection_prob=0.85, clutter_mean=10.0, sigma_r=6.0,
                            sigma_v=0.1, seed=seed)
    elif name == "default":
        rng = np.random.default_rng(12345)
        targets = []
        for k in range(12):
            birth = int(rng.integers(1, 700))
            death = int(min(1000, birth + rng.integers(150, 400)))
            state = (float(rng.uniform(200, 1700)), float(rng.uniform(150, 900)),
                     float(rng.uniform(-2, 2)), float(rng.uniform(-1, 1)),
                     float(rng.uniform(40, 80)), float(rng.uniform(100, 200)))
            targets.append(TargetSpec(birth, death, state, _PALETTE[k % len(_PALETTE)]))
        spec = ScenarioSpec(tuple(targets), n_frames=1000, detection_prob=0.90, clutter_mean=10.0,
                            sigma_r=6.0, sigma_v=0.2, seed=seed)
    else:
        raise ValueError(f"unknown preset {name!r}")
    if overrides:
        spec = replace(spec, **overrides)
    return spec
