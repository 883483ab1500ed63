"""MOT-Challenge text files, track sets and non-maximum suppression.

Files use 1-indexed frames and top-left boxes ``(left, top, width, height)``;
everything inside the package uses center boxes ``[cx, cy, w, h]``. The
conversion happens here and nowhere else.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

log = logging.getLogger(__name__)


class MOTFormatError(ValueError):
    pass


def tlwh_to_center(left, top, width, height) -> np.ndarray:
    return np.array([left + width / 2.0, top + height / 2.0, width, height], dtype=float)


def center_to_tlwh(box) -> tuple[float, float, float, float]:
    cx, cy, w, h = (float(x) for x in box)
    return cx - w / 2.0, cy - h / 2.0, w, h


@dataclass
class Detection:
    frame: int
    bbox: tuple  # (left, top, width, height)
    confidence: float = 1.0
    det_index: int = 0
    feature: Optional[np.ndarray] = None

    @property
    def z(self) -> np.ndarray:
        return tlwh_to_center(*self.bbox)

    @classmethod
    def from_center(cls, frame: int, box, confidence: float = 1.0, det_index: int = 0,
                    feature=None) -> "Detection":
        return cls(frame, center_to_tlwh(box), confidence, det_index, feature)


def iou(a, b) -> float:
    """IoU of two top-left boxes."""
    if tuple(a) == tuple(b):
        return 1.0 if a[2] > 0 and a[3] > 0 else 0.0
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    iw = min(ax0 + aw, bx0 + bw) - max(ax0, bx0)
    ih = min(ay0 + ah, by0 + bh) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return float(inter / union) if union > 0 else 0.0


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between rows of two ``(N, 4)`` / ``(M, 4)`` top-left arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    x0 = np.maximum(a[:, None, 0], b[None, :, 0])
    y0 = np.maximum(a[:, None, 1], b[None, :, 1])
    x1 = np.minimum(a[:, None, 0] + a[:, None, 2], b[None, :, 0] + b[None, :, 2])
    y1 = np.minimum(a[:, None, 1] + a[:, None, 3], b[None, :, 1] + b[None, :, 3])
    inter = np.clip(x1 - x0, 0, None) * np.clip(y1 - y0, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def _parse_rows(path):
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) < 6:
                raise MOTFormatError(f"{path}:{lineno}: expected at least 6 fields, got {len(parts)}")
            try:
                frame = int(float(parts[0]))
                ident = int(float(parts[1]))
                box = tuple(float(x) for x in parts[2:6])
                conf = float(parts[6]) if len(parts) > 6 and parts[6] != "" else 1.0
            except ValueError as exc:
                raise MOTFormatError(f"{path}:{lineno}: {exc}") from None
            if frame < 1:
                raise MOTFormatError(f"{path}:{lineno}: frame must be >= 1, got {frame}")
            yield lineno, frame, ident, box, conf


def read_detections(path) -> dict[int, list[Detection]]:
    """Parse a ``det.txt``; the id column is ignored."""
    out: dict[int, list[Detection]] = defaultdict(list)
    dropped = 0
    for _, frame, _, box, conf in _parse_rows(path):
        if box[2] <= 0 or box[3] <= 0:
            dropped += 1
            continue
        dets = out[frame]
        dets.append(Detection(frame, box, conf, len(dets)))
    if dropped:
        log.info("%s: dropped %d rows with non-positive size", path, dropped)
    return dict(out)


def nms(detections: list[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy suppression by descending confidence; ties go to the lower det_index."""
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must be in (0, 1)")
    order = sorted(detections, key=lambda d: (-d.confidence, d.det_index))
    kept: list[Detection] = []
    for d in order:
        if all(iou(d.bbox, k.bbox) <= iou_threshold for k in kept):
            kept.append(d)
    return sorted(kept, key=lambda d: d.det_index)


@dataclass
class TrackSet:
    """Labeled trajectories: ``label -> {frame: (center box, score)}``."""

    tracks: dict = field(default_factory=dict)

    def add(self, frame: int, label: int, box, score: float = 1.0) -> None:
        box = np.asarray(box, dtype=float)
        if box[2] <= 0 or box[3] <= 0:
            raise ValueError(f"non-positive box size for label {label} at frame {frame}")
        per = self.tracks.setdefault(int(label), {})
        if frame in per:
            raise ValueError(f"duplicate label {label} in frame {frame}")
        per[int(frame)] = (box, float(score))

    @property
    def labels(self) -> list[int]:
        return sorted(self.tracks)

    def frames(self) -> list[int]:
        return sorted({f for per in self.tracks.values() for f in per})

    def by_frame(self) -> dict[int, list[tuple[int, np.ndarray]]]:
        out: dict[int, list] = defaultdict(list)
        for label in sorted(self.tracks):
            for f, (box, _) in self.tracks[label].items():
                out[f].append((label, box))
        return dict(out)

    def __len__(self) -> int:
        return sum(len(per) for per in self.tracks.values())

    def rows(self) -> Iterable[tuple[int, int, np.ndarray, float]]:
        items = [(f, label, box, score) for label, per in self.tracks.items()
                 for f, (box, score) in per.items()]
        return sorted(items, key=lambda r: (r[0], r[1]))


def write_tracks(trackset: TrackSet, path) -> None:
    with Path(path).open("w", newline="\n") as fh:
        for frame, label, box, score in trackset.rows():
            if label < 1:
                raise ValueError(f"labels must be positive, got {label}")
            left, top, w, h = center_to_tlwh(box)
            fh.write(f"{frame},{label},{left!r},{top!r},{w!r},{h!r},{score!r},-1,-1,-1\n")


def read_tracks(path) -> TrackSet:
    """Parse a ``gt.txt`` or result file into a :class:`TrackSet`."""
    ts = TrackSet()
    for lineno, frame, ident, box, conf in _parse_rows(path):
        if box[2] <= 0 or box[3] <= 0:
            continue
        try:
            ts.add(frame, ident, tlwh_to_center(*box), conf)
        except ValueError as exc:
            raise MOTFormatError(f"{path}:{lineno}: {exc}") from None
    return ts


def write_detections(detections: dict[int, list[Detection]], path) -> None:
    with Path(path).open("w", newline="\n") as fh:
        for frame in sorted(detections):
            for d in sorted(detections[frame], key=lambda d: d.det_index):
                left, top, w, h = d.bbox
                fh.write(f"{frame},-1,{left!r},{top!r},{w!r},{h!r},{d.confidence!r},-1,-1,-1\n")
