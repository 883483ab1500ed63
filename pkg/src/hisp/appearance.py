"""Appearance features and their likelihood.

Features come from a pluggable provider: a precomputed table (CSV with a
``#dim=D`` preamble) or a deterministic RGB histogram of the detection crop.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Callable, Optional

import numpy as np

HIST_BINS = 8
HIST_DIM = HIST_BINS ** 3


class FeatureError(LookupError):
    pass


def _as_feature(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if not np.all(np.isfinite(v)):
        raise ValueError("feature vector has non-finite entries")
    return v


def cosine_similarity(a, b) -> float:
    a = _as_feature(a)
    b = _as_feature(b)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def appearance_likelihood(c: float) -> float:
    """``e^c / (e^c + e^-c)``, i.e. the logistic function at ``2c``."""
    return 1.0 / (1.0 + math.exp(-2.0 * c))


def color_histogram(pixels: np.ndarray, bins: int = HIST_BINS) -> np.ndarray:
    """Joint RGB histogram of an ``(H, W, 3)`` uint8 array, L1-normalized."""
    px = np.asarray(pixels)
    if px.ndim != 3 or px.shape[2] < 3 or px.shape[0] * px.shape[1] == 0:
        raise ValueError(f"expected a non-empty (H, W, 3) image, got shape {px.shape}")
    q = (px[..., :3].astype(np.int64) * bins) // 256
    idx = (q[..., 0] * bins + q[..., 1]) * bins + q[..., 2]
    hist = np.bincount(idx.ravel(), minlength=bins ** 3).astype(float)
    return hist / hist.sum()


def crop(image: np.ndarray, box) -> np.ndarray:
    """Crop a center-form box ``[cx, cy, w, h]``, clipped to the image."""
    cx, cy, w, h = (float(x) for x in box)
    H, W = image.shape[:2]
    x0 = min(max(math.floor(cx - w / 2), 0), W)
    x1 = min(max(math.ceil(cx + w / 2), 0), W)
    y0 = min(max(math.floor(cy - h / 2), 0), H)
    y1 = min(max(math.ceil(cy + h / 2), 0), H)
    return image[y0:y1, x0:x1]


def read_feature_table(path) -> dict[tuple[int, int], np.ndarray]:
    path = Path(path)
    table: dict[tuple[int, int], np.ndarray] = {}
    with path.open(newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("#dim="):
            raise FeatureError(f"{path}: missing '#dim=D' preamble")
        dim = int(first[len("#dim="):])
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return table
        if header[:2] != ["frame", "det_index"] or len(header) != dim + 2:
            raise FeatureError(f"{path}: header does not match dim={dim}")
        for lineno, row in enumerate(reader, start=3):
            if not row:
                continue
            if len(row) != dim + 2:
                raise FeatureError(f"{path}:{lineno}: expected {dim + 2} fields, got {len(row)}")
            table[(int(row[0]), int(row[1]))] = np.array(row[2:], dtype=float)
    return table


def write_feature_table(table: dict[tuple[int, int], np.ndarray], path, dim: Optional[int] = None) -> None:
    if dim is None:
        dim = len(next(iter(table.values()))) if table else HIST_DIM
    with Path(path).open("w", newline="") as fh:
        fh.write(f"#dim={dim}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "det_index"] + [f"f{i}" for i in range(dim)])
        for (frame, idx) in sorted(table):
            w.writerow([frame, idx] + [repr(float(x)) for x in table[(frame, idx)]])


class AppearanceProvider:
    """Feature source plus the per-hypothesis memory policy.

    ``mode`` is one of ``off``, ``precomputed`` or ``histogram``. The memory
    policy is ``last-match`` or ``ema`` (with ``ema_alpha`` weighting the old
    feature).
    """

    def __init__(self, mode: str = "off", table=None,
                 frame_loader: Optional[Callable[[int], np.ndarray]] = None,
                 policy: str = "last-match", ema_alpha: float = 0.5):
        if mode not in ("off", "precomputed", "histogram"):
            raise ValueError(f"unknown appearance mode {mode!r}")
        if policy not in ("last-match", "ema"):
            raise ValueError(f"unknown feature policy {policy!r}")
        if mode == "precomputed" and table is None:
            raise ValueError("precomputed mode needs a feature table")
        if mode == "histogram" and frame_loader is None:
            raise ValueError("histogram mode needs a frame loader")
        self.mode = mode
        self.table = table
        self.frame_loader = frame_loader
        self.policy = policy
        self.ema_alpha = ema_alpha
        self._frame_cache: tuple[int, np.ndarray] | None = None

    @property
    def enabled(self) -> bool:
        return self.mode != "off"

    @classmethod
    def from_table_file(cls, path, **kw) -> "AppearanceProvider":
        return cls("precomputed", table=read_feature_table(path), **kw)

    @classmethod
    def from_image_dir(cls, directory, pattern: str = "{frame:06d}.jpg", **kw) -> "AppearanceProvider":
        directory = Path(directory)

        def load(frame: int) -> np.ndarray:
            from PIL import Image

            p = directory / pattern.format(frame=frame)
            if not p.exists():
                raise FeatureError(f"missing frame image {p}")
            with Image.open(p) as im:
                return np.asarray(im.convert("RGB"))

        return cls("histogram", frame_loader=load, **kw)

    def feature_for_detection(self, frame: int, det_index: int, box) -> np.ndarray:
        if self.mode == "precomputed":
            try:
                return self.table[(frame, det_index)]
            except KeyError:
                raise FeatureError(f"no feature for frame {frame}, detection {det_index}") from None
        if self.mode == "histogram":
            if self._frame_cache is None or self._frame_cache[0] != frame:
                self._frame_cache = (frame, self.frame_loader(frame))
            patch = crop(self._frame_cache[1], box)
            if patch.size == 0:
                raise FeatureError(f"empty crop for frame {frame}, detection {det_index}")
            return color_histogram(patch)
        raise FeatureError("appearance is disabled")

    def likelihood(self, hypothesis_feature, detection_feature) -> float:
        if not self.enabled or hypothesis_feature is None or detection_feature is None:
            return 1.0
        return appearance_likelihood(cosine_similarity(hypothesis_feature, detection_feature))

    def update_feature(self, hypothesis_feature, detection_feature):
        if detection_feature is None:
            return hypothesis_feature
        if hypothesis_feature is None:
            return detection_feature
        return hypothesis_feature_update(hypothesis_feature, detection_feature,
                                         self.policy, self.ema_alpha)


def hypothesis_feature_update(old, new, policy: str = "last-match", alpha: float = 0.5) -> np.ndarray:
    old = np.asarray(old, dtype=float)
    new = np.asarray(new, dtype=float)
    if old.shape != new.shape:
        raise ValueError(f"feature length mismatch: {old.shape} vs {new.shape}")
    if policy == "last-match":
        return new
    if policy == "ema":
        return alpha * old + (1.0 - alpha) * new
    raise ValueError(f"unknown feature policy {policy!r}")
