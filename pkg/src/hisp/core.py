"""HISP filter recursion: prediction, association weights and measurement update.

A configuration holds the previously-detected hypotheses, the undetected
population (one track with a real-valued multiplicity), and two stores kept
only for track extraction: dead copies of hypotheses and per-measurement
clutter posteriors.

The external weight of a (hypothesis, measurement) pair is evaluated with a
product over all rows that is corrected only for the rows gated to the same
measurement, so one frame costs O(#non-zero association entries).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import chi2

from .appearance import AppearanceProvider
from .lingauss import (GaussianState, MotionModel, SensorModel, innovation_stats,
                       kf_predict, kf_update)
from .motio import Detection

log = logging.getLogger(__name__)

DEFAULT_GATE = float(chi2.ppf(0.999, df=4))
DEFAULT_BIRTH_COV = np.diag([100.0, 100.0, 25.0, 25.0, 20.0, 20.0])
NEG_INF = -math.inf


@dataclass(frozen=True)
class Hypothesis:
    """One previously-detected single-object law.

    ``path`` holds one slot per frame from ``path_start`` to the current
    frame, trimmed to the extraction window; a slot is the detection index in
    that frame or ``None`` for a missed detection. ``origin`` is the (frame,
    detection index) of the first detection and never changes.
    """

    id: int
    state: GaussianState
    weight: float
    path: tuple
    path_start: int
    origin: tuple[int, int]
    birth_time: int
    feature: Optional[np.ndarray] = None
    parent: Optional[int] = None
    multiplicity: int = 1

    @property
    def path_end(self) -> int:
        return self.path_start + len(self.path) - 1

    def window_path(self, frame: int, window: int) -> tuple:
        """Slots for frames ``frame-window+1 .. frame`` (``None`` where not covered)."""
        out = []
        for f in range(frame - window + 1, frame + 1):
            k = f - self.path_start
            out.append(self.path[k] if 0 <= k < len(self.path) else None)
        return tuple(out)

    def detections_in_window(self, frame: int, window: int) -> frozenset:
        lo = frame - window + 1
        return frozenset((self.path_start + k, slot) for k, slot in enumerate(self.path)
                         if slot is not None and lo <= self.path_start + k <= frame)


@dataclass(frozen=True)
class UndetectedPopulation:
    weight: float = 0.0
    multiplicity: float = 0.0


@dataclass(frozen=True)
class BirthModel:
    """Appearance of new objects.

    ``birth_prob`` is the per-measurement birth probability (mean births per
    frame spread uniformly over the frame area) and ``birth_likelihood`` the
    dimensionless association likelihood of a measurement with the
    uninformative undetected density.
    """

    mean_births_per_frame: float = 0.1
    birth_prob: float = 0.1 / (1920 * 1080)
    birth_covariance: np.ndarray = field(default_factory=lambda: DEFAULT_BIRTH_COV.copy())
    birth_likelihood: float = 1.0

    def __post_init__(self):
        if self.mean_births_per_frame <= 0 or self.birth_prob <= 0 or self.birth_likelihood <= 0:
            raise ValueError("birth model scalars must be positive")
        np.linalg.cholesky(self.birth_covariance)

    @classmethod
    def uniform(cls, mean_births_per_frame: float, frame_width: float, frame_height: float,
                birth_covariance=None, birth_likelihood: float = 1.0) -> "BirthModel":
        return cls(mean_births_per_frame=mean_births_per_frame,
                   birth_prob=mean_births_per_frame / (frame_width * frame_height),
                   birth_covariance=(DEFAULT_BIRTH_COV.copy() if birth_covariance is None
                                     else np.asarray(birth_covariance, dtype=float)),
                   birth_likelihood=birth_likelihood)


@dataclass(frozen=True)
class DeadRecord:
    hypothesis: Hypothesis
    death_time: int
    weight: float


@dataclass(frozen=True)
class ClutterRecord:
    frame: int
    det_index: int
    weight: float


@dataclass(frozen=True)
class MultiTargetConfiguration:
    frame: int = 0
    hypotheses: tuple = ()
    undetected: UndetectedPopulation = UndetectedPopulation()
    graveyard: tuple = ()
    clutter_records: tuple = ()
    window: int = 5
    next_id: int = 0
    # detections seen per frame inside the window: frame -> tuple of det indices
    measurements: tuple = ()

    def window_measurements(self) -> frozenset:
        lo = self.frame - self.window + 1
        return frozenset((f, i) for f, idx in self.measurements if f >= lo for i in idx)

    def total_weight(self) -> float:
        return float(sum(h.weight for h in self.hypotheses))


def logsumexp(values) -> float:
    values = list(values)
    top = max(values, default=NEG_INF)
    if top == NEG_INF:
        return NEG_INF
    return top + math.log(sum(math.exp(v - top) for v in values))


def _trim(path: tuple, path_start: int, window: int) -> tuple[tuple, int]:
    if len(path) <= window:
        return path, path_start
    drop = len(path) - window
    return path[drop:], path_start + drop


def predict(config: MultiTargetConfiguration, motion: MotionModel,
            birth: BirthModel) -> MultiTargetConfiguration:
    t = config.frame + 1
    p = motion.survival_prob
    survivors = []
    dead = []
    for h in config.hypotheses:
        state = kf_predict(h.state, motion, hypothesis_id=h.id)
        survivors.append(replace(h, state=state, weight=h.weight * p))
        dead.append(DeadRecord(h, t, h.weight * (1.0 - p)))

    u = config.undetected
    n_a = birth.mean_births_per_frame
    n_new = u.multiplicity + n_a
    w_new = (u.multiplicity * u.weight * p + n_a * birth.birth_prob) / n_new if n_new > 0 else 0.0

    lo = t - config.window + 1
    graveyard = tuple(d for d in config.graveyard if d.death_time >= lo) + tuple(dead)
    clutter = tuple(c for c in config.clutter_records if c.frame >= lo)
    measurements = tuple(m for m in config.measurements if m[0] >= lo)
    return replace(config, frame=t, hypotheses=tuple(survivors),
                   undetected=UndetectedPopulation(w_new, n_new),
                   graveyard=graveyard, clutter_records=clutter, measurements=measurements)


def _measurement_matrix(detections: Sequence[Detection]) -> np.ndarray:
    return np.array([d.z for d in detections], dtype=float).reshape(-1, 4)


def gate(hypothesis: Hypothesis, detections: Sequence[Detection], sensor: SensorModel,
         gate_threshold: float = DEFAULT_GATE) -> set[int]:
    """Positions in ``detections`` whose squared innovation distance is within the gate."""
    if gate_threshold <= 0:
        raise ValueError("gate_threshold must be positive")
    if not detections:
        return set()
    d2, _ = innovation_stats(hypothesis.state, _measurement_matrix(detections), sensor, hypothesis.id)
    return {int(j) for j in np.flatnonzero(d2 <= gate_threshold)}


@dataclass
class Row:
    """Association entries for one predicted hypothesis.

    ``entries`` maps a detection position to the association weight (for a
    detection, the weight with and without the non-existence term coincide).
    ``w_phi`` includes the possibility that the object does not exist;
    ``w_miss`` is only the missed-detection mass.
    """

    index: int
    prior_weight: float
    entries: dict = field(default_factory=dict)
    posteriors: dict = field(default_factory=dict)
    w_phi: float = 1.0
    w_miss: float = 0.0
    log_b: float = 0.0
    log_wex: dict = field(default_factory=dict)
    log_wex_phi: float = 0.0


@dataclass
class AssociationTable:
    frame: int
    rows: list
    n_meas: int
    w_u: np.ndarray
    w_u_phi: float
    n_u: float
    v: np.ndarray
    C: np.ndarray
    columns: list
    log_wex_u: Optional[np.ndarray] = None
    log_wex_u_phi: float = 0.0
    log_wex_clutter: Optional[np.ndarray] = None
    log_column_total: Optional[np.ndarray] = None
    floor: float = 1e-300
    underflows: int = 0
    fallbacks: int = 0
    row_mass: list = field(default_factory=list)
    collapsed_rows: list = field(default_factory=list)

    def wex(self, row: int, j: Optional[int]) -> float:
        r = self.rows[row]
        lv = r.log_wex_phi if j is None else r.log_wex[j]
        return math.exp(lv)

    @property
    def nnz(self) -> int:
        return sum(len(r.entries) for r in self.rows)


def build_association_table(config: MultiTargetConfiguration, detections: Sequence[Detection],
                            sensor: SensorModel, appearance: Optional[AppearanceProvider] = None,
                            birth: Optional[BirthModel] = None,
                            gate_threshold: float = DEFAULT_GATE) -> AssociationTable:
    appearance = appearance or AppearanceProvider("off")
    birth = birth or BirthModel.uniform(0.1, sensor.frame_width, sensor.frame_height)
    pd = sensor.detection_prob
    m = len(detections)
    Z = _measurement_matrix(detections)
    rows = []
    columns = [[] for _ in range(m)]
    for k, h in enumerate(config.hypotheses):
        row = Row(index=k, prior_weight=h.weight)
        row.w_miss = h.weight * (1.0 - pd)
        row.w_phi = row.w_miss + (1.0 - h.weight)
        if m:
            d2, log_ratio = innovation_stats(h.state, Z, sensor, h.id)
            for j in np.flatnonzero(d2 <= gate_threshold):
                j = int(j)
                g_app = appearance.likelihood(h.feature, detections[j].feature)
                w = h.weight * pd * g_app * math.exp(0.5 * log_ratio - 0.5 * float(d2[j]))
                if w > 0.0:
                    row.entries[j] = w
                    columns[j].append(k)
        rows.append(row)

    u = config.undetected
    w_u = np.full(m, u.weight * pd * birth.birth_likelihood)
    w_u_phi = u.weight * (1.0 - pd) + (1.0 - u.weight)
    v = np.full(m, sensor.clutter_density)
    C = w_u / w_u_phi + v / (1.0 - v)
    return AssociationTable(frame=config.frame, rows=rows, n_meas=m, w_u=w_u, w_u_phi=w_u_phi,
                            n_u=u.multiplicity, v=v, C=C, columns=columns)


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0.0 else NEG_INF


def external_weights(table: AssociationTable, floor: Optional[float] = None) -> AssociationTable:
    """Fill the log external weights of every non-zero pair, the miss entries,
    the undetected row and the clutter rows."""
    if floor is not None:
        table.floor = floor
    log_floor = math.log(table.floor)
    m = table.n_meas
    logC = np.log(table.C) if m else np.zeros(0)
    sum_logC = float(logC.sum())
    log_wu_phi = math.log(table.w_u_phi)
    log_const = table.n_u * log_wu_phi + float(np.log1p(-table.v).sum())

    for r in table.rows:
        b = r.w_phi + sum(w / table.C[j] for j, w in r.entries.items())
        r.log_b = _safe_log(b)
    log_total = sum(r.log_b for r in table.rows)
    all_positive = all(r.log_b > NEG_INF for r in table.rows)

    # per-measurement correction: sum over rows gated to j of log(B - w/C) - log(B)
    corr = {}
    col_corr = np.zeros(m)
    exact_zero = np.zeros(m, dtype=bool)
    for j, col in enumerate(table.columns):
        for k in col:
            r = table.rows[k]
            reduced = math.exp(r.log_b) - r.entries[j] / table.C[j]
            c = _safe_log(reduced) - r.log_b if reduced > 0.0 else NEG_INF
            corr[(k, j)] = c
            if c == NEG_INF:
                exact_zero[j] = True
            else:
                col_corr[j] += c

    def clamp(x: float) -> float:
        if x < log_floor:
            table.underflows += 1
            return log_floor
        return x

    def direct(skip_row: Optional[int], j: Optional[int]) -> float:
        table.fallbacks += 1
        acc = 0.0
        for r in table.rows:
            if r.index == skip_row:
                continue
            b = r.w_phi + sum(w / table.C[jj] for jj, w in r.entries.items() if jj != j)
            if b <= 0.0:
                return NEG_INF
            acc += math.log(b)
        return acc

    def product_except(k: Optional[int], j: Optional[int]) -> float:
        """log of the product over rows other than k of the bracket excluding j."""
        if not all_positive or (j is not None and exact_zero[j]):
            return direct(k, j)
        acc = log_total
        if k is not None:
            acc -= table.rows[k].log_b
        if j is not None:
            acc += col_corr[j]
            if k is not None and (k, j) in corr:
                acc -= corr[(k, j)]
        return acc

    for r in table.rows:
        for j in r.entries:
            r.log_wex[j] = clamp(log_const + sum_logC - logC[j] + product_except(r.index, j))
        r.log_wex_phi = clamp(log_const + sum_logC + product_except(r.index, None))

    table.log_wex_u = np.array([clamp(log_const - log_wu_phi + sum_logC - logC[j]
                                      + product_except(None, j)) for j in range(m)])
    table.log_wex_u_phi = clamp(log_const - log_wu_phi + sum_logC + product_except(None, None))
    table.log_wex_clutter = np.array([clamp(log_const - math.log1p(-table.v[j]) + sum_logC - logC[j]
                                            + product_except(None, j)) for j in range(m)])

    totals = []
    for j in range(m):
        terms = [table.rows[k].log_wex[j] + math.log(table.rows[k].entries[j]) for k in table.columns[j]]
        terms.append(table.log_wex_u[j] + _safe_log(table.w_u[j]))
        terms.append(table.log_wex_clutter[j] + _safe_log(table.v[j]))
        totals.append(logsumexp(terms))
    table.log_column_total = np.array(totals)
    if table.underflows:
        log.debug("frame %d: %d external weights clamped at floor", table.frame, table.underflows)
    return table


def row_weights(table: AssociationTable, k: int) -> tuple[dict, float, float]:
    """Hypothesis-normalized posterior split of one row.

    Returns ``(detected, missed, nonexistence)`` where ``detected`` maps a
    detection position to its child weight. The three parts sum to one.
    """
    r = table.rows[k]
    terms = {j: r.log_wex[j] + math.log(w) for j, w in r.entries.items()}
    phi_term = r.log_wex_phi + math.log(r.w_phi)
    denom = logsumexp(list(terms.values()) + [phi_term])
    if not math.isfinite(denom):
        raise ZeroDivisionError(f"row {k} has a zero normalization")
    detected = {j: math.exp(x - denom) for j, x in terms.items()}
    missed = math.exp(r.log_wex_phi + _safe_log(r.w_miss) - denom) if r.w_miss > 0 else 0.0
    absent = math.exp(r.log_wex_phi + _safe_log(1.0 - r.prior_weight) - denom) if r.prior_weight < 1 else 0.0
    return detected, missed, absent


def measurement_weights(table: AssociationTable, j: int) -> tuple[dict, float, float]:
    """Measurement-normalized posterior of detection ``j``.

    Returns ``(by_row, birth, clutter)``; the parts sum to one.
    """
    denom = table.log_column_total[j]
    by_row = {k: math.exp(table.rows[k].log_wex[j] + math.log(table.rows[k].entries[j]) - denom)
              for k in table.columns[j]}
    birth = math.exp(table.log_wex_u[j] + _safe_log(table.w_u[j]) - denom)
    clutter = math.exp(table.log_wex_clutter[j] + _safe_log(table.v[j]) - denom)
    return by_row, birth, clutter


def update(config: MultiTargetConfiguration, detections: Sequence[Detection],
           table: AssociationTable, sensor: SensorModel,
           appearance: Optional[AppearanceProvider] = None,
           birth: Optional[BirthModel] = None) -> MultiTargetConfiguration:
    if table.log_column_total is None:
        raise ValueError("external weights have not been computed for this table")
    appearance = appearance or AppearanceProvider("off")
    birth = birth or BirthModel.uniform(0.1, sensor.frame_width, sensor.frame_height)
    t = config.frame
    T = config.window
    next_id = config.next_id
    children = []
    table.row_mass = []
    table.collapsed_rows = []

    for k, h in enumerate(config.hypotheses):
        try:
            detected, missed, absent = row_weights(table, k)
        except ZeroDivisionError:
            log.warning("frame %d: hypothesis %s collapsed to its missed child", t, h.id)
            table.collapsed_rows.append(h.id)
            detected, missed, absent = {}, 1.0, 0.0
        table.row_mass.append(sum(detected.values()) + missed + absent)
        r = table.rows[k]
        for j, w in detected.items():
            d = detections[j]
            state = r.posteriors.get(j)
            if state is None:
                state, _ = kf_update(h.state, d.z, sensor, hypothesis_id=h.id)
            path, start = _trim(h.path + (d.det_index,), h.path_start, T)
            children.append(replace(h, id=next_id, state=state, weight=min(w, 1.0), path=path,
                                    path_start=start, parent=h.id,
                                    feature=appearance.update_feature(h.feature, d.feature)))
            next_id += 1
        path, start = _trim(h.path + (None,), h.path_start, T)
        children.append(replace(h, id=next_id, weight=min(missed, 1.0), path=path,
                                path_start=start, parent=h.id))
        next_id += 1

    clutter = []
    for j, d in enumerate(detections):
        _, w_birth, w_clutter = measurement_weights(table, j)
        clutter.append(ClutterRecord(t, d.det_index, w_clutter))
        mean = np.array([d.z[0], d.z[1], 0.0, 0.0, d.z[2], d.z[3]])
        children.append(Hypothesis(id=next_id, state=GaussianState(mean, birth.birth_covariance.copy()),
                                   weight=min(w_birth, 1.0), path=(d.det_index,), path_start=t,
                                   origin=(t, d.det_index), birth_time=t, feature=d.feature))
        next_id += 1

    measurements = config.measurements + ((t, tuple(d.det_index for d in detections)),)
    return replace(config, hypotheses=tuple(children), next_id=next_id,
                   clutter_records=config.clutter_records + tuple(clutter),
                   measurements=measurements)


def step(config: MultiTargetConfiguration, detections: Sequence[Detection], motion: MotionModel,
         sensor: SensorModel, birth: BirthModel, appearance: Optional[AppearanceProvider] = None,
         gate_threshold: float = DEFAULT_GATE) -> tuple[MultiTargetConfiguration, AssociationTable]:
    """Predict and update one frame (no pruning or merging)."""
    predicted = predict(config, motion, birth)
    table = build_association_table(predicted, detections, sensor, appearance, birth, gate_threshold)
    external_weights(table)
    return update(predicted, detections, table, sensor, appearance, birth), table
