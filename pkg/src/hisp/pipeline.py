"""Online frame loop: predict, associate, update, prune/merge, extract."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .appearance import AppearanceProvider
from .config import RunConfig
from .core import (MultiTargetConfiguration, build_association_table, external_weights,
                   predict, update)
from .extraction import TrackExtractor
from .management import merge_densities, merge_same_path, prune
from .motio import Detection, TrackSet, nms, read_detections, write_tracks

log = logging.getLogger(__name__)


class TrackerError(RuntimeError):
    def __init__(self, frame: int, cause: Exception):
        super().__init__(f"frame {frame}: {cause}")
        self.frame = frame
        self.cause = cause


def make_appearance(config: RunConfig) -> AppearanceProvider:
    kw = dict(policy=config.feature_policy, ema_alpha=config.ema_alpha)
    if config.appearance == "precomputed":
        if not config.features:
            raise ValueError("precomputed appearance needs a features file")
        return AppearanceProvider.from_table_file(config.features, **kw)
    if config.appearance == "histogram":
        if not config.image_dir:
            raise ValueError("histogram appearance needs an image directory")
        return AppearanceProvider.from_image_dir(config.image_dir, config.image_pattern, **kw)
    return AppearanceProvider("off", **kw)


class Tracker:
    """Stateful online tracker; feed it one frame of detections at a time."""

    def __init__(self, config: RunConfig, appearance: Optional[AppearanceProvider] = None):
        self.config = config
        self.motion = config.motion()
        self.sensor = config.sensor()
        self.sensor.check_against(self.motion)
        self.birth = config.birth()
        self.pm = config.prune_merge()
        self.appearance = appearance or make_appearance(config)
        self.state = MultiTargetConfiguration(window=config.window)
        self.extractor = TrackExtractor(config.window, config.solver_timeout)
        self.last_table = None

    def _attach_features(self, frame: int, detections: Sequence[Detection]) -> None:
        if not self.appearance.enabled:
            return
        for d in detections:
            if d.feature is None:
                d.feature = self.appearance.feature_for_detection(frame, d.det_index, d.z)

    def step(self, frame: int, detections: Sequence[Detection]):
        """Process one frame; returns ``(reported tracks, diagnostics dict)``."""
        t0 = time.perf_counter()
        cfg = self.config
        detections = list(detections)
        if cfg.nms_threshold is not None and detections:
            detections = nms(detections, cfg.nms_threshold)
        try:
            self._attach_features(frame, detections)
            state = predict(self.state, self.motion, self.birth)
            if state.frame != frame:
                raise ValueError(f"frame index out of sync: expected {state.frame}")
            table = build_association_table(state, detections, self.sensor, self.appearance,
                                            self.birth, cfg.gate_threshold)
            external_weights(table)
            state = update(state, detections, table, self.sensor, self.appearance, self.birth)
            n_updated = len(state.hypotheses)
            state = prune(state, self.pm)
            state = merge_densities(state, self.pm)
            state = merge_same_path(state)
            self.state = state
            self.last_table = table
            out = self.extractor.extract(state) if cfg.extract else None
        except Exception as exc:
            raise TrackerError(frame, exc) from exc

        reported = []
        if out is not None:
            for s in out.tracks:
                box = s.hypothesis.state.box
                if box[2] > 0 and box[3] > 0:
                    reported.append((s.label, box, s.weight))
        diag = {
            "frame": frame,
            "n_detections": len(detections),
            "n_hypotheses_updated": n_updated,
            "n_hypotheses": len(state.hypotheses),
            "weight_mass": state.total_weight(),
            "max_weight": max((h.weight for h in state.hypotheses), default=0.0),
            "undetected_weight": state.undetected.weight,
            "undetected_multiplicity": state.undetected.multiplicity,
            "n_graveyard": len(state.graveyard),
            "n_clutter_records": len(state.clutter_records),
            "row_mass_max_error": max((abs(x - 1.0) for x in table.row_mass), default=0.0),
            "collapsed_rows": len(table.collapsed_rows),
            "underflows": table.underflows,
            "wex_fallbacks": table.fallbacks,
            "solver_optimal": None if out is None else out.optimal,
            "solver_objective": None if out is None else out.objective,
            "n_candidates": None if out is None else out.n_candidates,
            "n_tracks": len(reported),
            "seconds": time.perf_counter() - t0,
        }
        return reported, diag


@dataclass
class TrackerRun:
    result: TrackSet
    diagnostics: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)


def run_tracker(config: RunConfig, detections: Optional[dict] = None,
                appearance: Optional[AppearanceProvider] = None,
                keep_snapshots: bool = False) -> TrackerRun:
    """Run over a whole sequence and optionally write the result files.

    ``detections`` maps frame -> list of detections; when omitted they are
    read from ``config.det``. Frames without detections are still processed.
    """
    if detections is None:
        if not config.det:
            raise ValueError("no detections given and no det file configured")
        detections = read_detections(config.det)
    last = config.n_frames or max(detections, default=0)
    tracker = Tracker(config, appearance)
    result = TrackSet()
    run = TrackerRun(result)
    for frame in range(1, last + 1):
        reported, diag = tracker.step(frame, detections.get(frame, []))
        for label, box, score in reported:
            result.add(frame, label, box, min(score, 1.0))
        run.diagnostics.append(diag)
        if keep_snapshots:
            run.snapshots.append(tracker.state)
    if config.out:
        write_tracks(result, config.out)
    if config.diagnostics:
        with Path(config.diagnostics).open("w") as fh:
            for d in run.diagnostics:
                fh.write(json.dumps(d) + "\n")
    return run


def snapshot_to_dict(state: MultiTargetConfiguration) -> dict:
    return {
        "frame": state.frame,
        "undetected": {"weight": state.undetected.weight, "multiplicity": state.undetected.multiplicity},
        "hypotheses": [
            {"id": h.id, "weight": h.weight, "origin": list(h.origin), "birth_time": h.birth_time,
             "path_start": h.path_start, "path": [s if s is not None else None for s in h.path],
             "mean": [float(x) for x in h.state.mean]}
            for h in state.hypotheses],
        "graveyard": [{"id": d.hypothesis.id, "death_time": d.death_time, "weight": d.weight}
                      for d in state.graveyard],
        "clutter": [{"frame": c.frame, "det_index": c.det_index, "weight": c.weight}
                    for c in state.clutter_records],
    }
