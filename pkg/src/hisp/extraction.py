"""Sliding-window track extraction.

Candidates are live hypotheses, dead copies and per-measurement clutter
posteriors. The selected subset covers every measurement of the window
exactly once and maximizes the summed log weight; it is found by an exact
branch-and-bound over independent components. Extraction only reads the
filter configuration.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

from .core import Hypothesis, MultiTargetConfiguration

log = logging.getLogger(__name__)

LIVE, DEAD, CLUTTER = "detected-track", "dead-track", "clutter"


class ExtractionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Candidate:
    cid: int
    log_weight: float
    covered: frozenset
    kind: str = LIVE
    hypothesis: Optional[Hypothesis] = None

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)


@dataclass
class ExtractionProblem:
    candidates: list
    window_measurements: frozenset
    dropped: int = 0

    def objective(self, selection) -> float:
        by_id = {c.cid: c for c in self.candidates}
        return sum(by_id[i].log_weight for i in selection)


@dataclass
class Solution:
    selected: frozenset
    objective: float
    optimal: bool = True
    nodes: int = 0


def build_problem(config: MultiTargetConfiguration, window: Optional[int] = None) -> ExtractionProblem:
    T = window if window is not None else config.window
    t = config.frame
    cands: list[Candidate] = []
    dropped = 0

    def add(weight, covered, kind, hyp=None):
        nonlocal dropped
        if not covered:
            return
        if not weight > 0.0:
            dropped += 1
            return
        cands.append(Candidate(len(cands), math.log(min(weight, 1.0)), frozenset(covered), kind, hyp))

    for h in config.hypotheses:
        add(h.weight, h.detections_in_window(t, T), LIVE, h)
    for d in config.graveyard:
        add(d.weight, d.hypothesis.detections_in_window(t, T), DEAD, d.hypothesis)
    lo = t - T + 1
    for c in config.clutter_records:
        if c.frame >= lo:
            add(c.weight, {(c.frame, c.det_index)}, CLUTTER)
    if dropped:
        log.debug("frame %d: dropped %d candidates with non-positive weight", t, dropped)
    measurements = frozenset(m for m in config.window_measurements() if m[0] >= lo)
    return ExtractionProblem(cands, measurements, dropped)


def _components(cands: list[Candidate]) -> list[list[Candidate]]:
    parent = list(range(len(cands)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: dict = {}
    for i, c in enumerate(cands):
        for m in c.covered:
            if m in owner:
                a, b = find(i), find(owner[m])
                if a != b:
                    parent[a] = b
            else:
                owner[m] = i
    groups: dict[int, list] = {}
    for i, c in enumerate(cands):
        groups.setdefault(find(i), []).append(c)
    return list(groups.values())


class _Search:
    def __init__(self, cands, deadline):
        self.cands = sorted(cands, key=lambda c: (-c.log_weight, c.cid))
        meas = sorted({m for c in self.cands for m in c.covered})
        self.bit = {m: 1 << i for i, m in enumerate(meas)}
        self.full = (1 << len(meas)) - 1
        self.masks = [sum(self.bit[m] for m in c.covered) for c in self.cands]
        self.by_meas = {b: [] for b in self.bit.values()}
        share = {b: -math.inf for b in self.bit.values()}
        for i, c in enumerate(self.cands):
            s = c.log_weight / len(c.covered)
            for m in c.covered:
                b = self.bit[m]
                self.by_meas[b].append(i)
                share[b] = max(share[b], s)
        self.share = share
        self.best = -math.inf
        self.best_sel: Optional[tuple] = None
        self.deadline = deadline
        self.timed_out = False
        self.nodes = 0

    def bound(self, covered: int) -> float:
        total = 0.0
        for b, s in self.share.items():
            if not covered & b:
                total += s
        return total

    def run(self):
        self._dfs(0, 0.0, ())

    def _dfs(self, covered: int, score: float, chosen: tuple):
        self.nodes += 1
        if self.deadline is not None and self.nodes % 256 == 0 and time.perf_counter() > self.deadline:
            self.timed_out = True
        if self.timed_out:
            return
        if covered == self.full:
            if score > self.best:
                self.best, self.best_sel = score, chosen
            return
        if score + self.bound(covered) <= self.best:
            return
        # branch on the uncovered measurement with the fewest compatible candidates
        pick, options = None, None
        for b, idx in self.by_meas.items():
            if covered & b:
                continue
            opts = [i for i in idx if not self.masks[i] & covered]
            if not opts:
                return
            if options is None or len(opts) < len(options):
                pick, options = b, opts
                if len(opts) == 1:
                    break
        for i in options:
            self._dfs(covered | self.masks[i], score + self.cands[i].log_weight, chosen + (self.cands[i].cid,))


def solve(problem: ExtractionProblem, timeout: Optional[float] = 0.5) -> Solution:
    """Exact maximum-weight exact cover of the window measurements.

    With a ``timeout`` in seconds the best incumbent found so far is returned
    and flagged as not proven optimal.
    """
    uncovered = problem.window_measurements - {m for c in problem.candidates for m in c.covered}
    if uncovered:
        # only possible when clutter has zero density and the births were pruned
        log.debug("%d window measurements have no candidate; left out of the cover", len(uncovered))
    usable = [c for c in problem.candidates if c.covered]
    deadline = None if timeout is None else time.perf_counter() + timeout
    selected, objective, optimal, nodes = [], 0.0, True, 0
    for comp in _components(usable):
        search = _Search(comp, deadline)
        search.run()
        nodes += search.nodes
        if search.best_sel is None:
            if search.timed_out:
                # fall back to the best clutter-only cover if one exists
                clutter = [c for c in comp if c.kind == CLUTTER and len(c.covered) == 1]
                if {m for c in clutter for m in c.covered} == {m for c in comp for m in c.covered}:
                    selected.extend(c.cid for c in clutter)
                    objective += sum(c.log_weight for c in clutter)
                    optimal = False
                    continue
                raise ExtractionError("extraction timed out without a feasible selection")
            raise ExtractionError("extraction problem is infeasible")
        optimal &= not search.timed_out
        selected.extend(search.best_sel)
        objective += search.best
    return Solution(frozenset(selected), objective, optimal, nodes)


@dataclass
class SelectedTrack:
    candidate_id: int
    hypothesis: Hypothesis
    weight: float
    label: int = 0


@dataclass
class LabelRegistry:
    """Maps first detections to output labels and keeps duplicate reassignments stable."""

    next_label: int = 1
    by_origin: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)

    def fresh(self) -> int:
        label = self.next_label
        self.next_label += 1
        return label

    def origin_label(self, origin) -> int:
        if origin not in self.by_origin:
            self.by_origin[origin] = self.fresh()
        return self.by_origin[origin]

    def propagate(self, hypotheses) -> None:
        """Carry reassigned labels from parents to their children."""
        old = self.overrides
        self.overrides = {}
        for h in hypotheses:
            if h.id in old:
                self.overrides[h.id] = old[h.id]
            elif h.parent is not None and h.parent in old:
                self.overrides[h.id] = old[h.parent]

    def label_for(self, h: Hypothesis) -> int:
        if h.id in self.overrides:
            return self.overrides[h.id]
        return self.origin_label(h.origin)


def resolve_labels(selected: list[SelectedTrack], registry: LabelRegistry) -> list[SelectedTrack]:
    """Give every selected track a label, unique within the frame.

    When several tracks share a label the heaviest keeps it (lower candidate
    id on ties) and the others are treated as new tracks.
    """
    groups: dict[int, list[SelectedTrack]] = {}
    for s in selected:
        groups.setdefault(registry.label_for(s.hypothesis), []).append(s)
    out = []
    for label, group in groups.items():
        group.sort(key=lambda s: (-s.weight, s.candidate_id))
        group[0].label = label
        out.append(group[0])
        for s in group[1:]:
            s.label = registry.fresh()
            registry.overrides[s.hypothesis.id] = s.label
            out.append(s)
    out.sort(key=lambda s: s.label)
    return out


@dataclass
class FrameOutput:
    frame: int
    tracks: list
    optimal: bool
    objective: float
    n_candidates: int


class TrackExtractor:
    """Per-sequence extraction state (label registry)."""

    def __init__(self, window: int = 5, timeout: Optional[float] = 0.5):
        self.window = window
        self.timeout = timeout
        self.registry = LabelRegistry()

    def extract(self, config: MultiTargetConfiguration) -> FrameOutput:
        self.registry.propagate(config.hypotheses)
        problem = build_problem(config, self.window)
        sol = solve(problem, self.timeout)
        if not sol.optimal:
            log.warning("frame %d: extraction timed out, using incumbent", config.frame)
        by_id = {c.cid: c for c in problem.candidates}
        live = [SelectedTrack(i, by_id[i].hypothesis, by_id[i].weight)
                for i in sorted(sol.selected) if by_id[i].kind == LIVE]
        tracks = resolve_labels(live, self.registry)
        return FrameOutput(config.frame, tracks, sol.optimal, sol.objective, len(problem.candidates))
