"""CLEAR-MOT and identity metrics on IoU overlap.

Per frame, correspondences from earlier frames are kept while they still
overlap by at least ``iou_min``; the rest are matched by a maximum-total-IoU
assignment. A fragmentation is an interruption of a ground-truth trajectory
that is later resumed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .motio import TrackSet, center_to_tlwh, iou_matrix


@dataclass
class EvalReport:
    mota: float
    motp: float
    idf1: float
    fp: int
    fn: int
    idsw: int
    frag: int
    mt: float
    ml: float
    num_gt: int
    num_matches: int
    num_gt_tracks: int
    frag_convention: str = "interruptions followed by resumption"
    matches: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("matches")
        return d

    def to_json(self, with_matches: bool = False) -> str:
        d = asdict(self) if with_matches else self.summary()
        return json.dumps(d, indent=2, sort_keys=True)

    def as_table(self) -> str:
        cols = [("MOTA", f"{self.mota:.3f}"), ("MOTP", f"{self.motp:.3f}"), ("IDF1", f"{self.idf1:.3f}"),
                ("MT%", f"{self.mt:.1f}"), ("ML%", f"{self.ml:.1f}"), ("FP", str(self.fp)),
                ("FN", str(self.fn)), ("IDSw", str(self.idsw)), ("Frag", str(self.frag))]
        widths = [max(len(a), len(b)) for a, b in cols]
        head = "  ".join(a.rjust(w) for (a, _), w in zip(cols, widths))
        vals = "  ".join(b.rjust(w) for (_, b), w in zip(cols, widths))
        return head + "\n" + vals


def _frame_boxes(ts: TrackSet):
    out = {}
    for f, items in ts.by_frame().items():
        ids = [label for label, _ in items]
        boxes = np.array([center_to_tlwh(b) for _, b in items], dtype=float).reshape(-1, 4)
        out[f] = (ids, boxes)
    return out


def evaluate(results: TrackSet, truth: TrackSet, iou_min: float = 0.5) -> EvalReport:
    res_frames = _frame_boxes(results)
    gt_frames = _frame_boxes(truth)
    if res_frames and gt_frames:
        if max(res_frames) < min(gt_frames) or min(res_frames) > max(gt_frames):
            raise ValueError("results and ground truth cover disjoint frame ranges")
    frames = sorted(set(res_frames) | set(gt_frames))
    empty = ([], np.zeros((0, 4)))

    last_match: dict[int, int] = {}
    fp = fn = idsw = 0
    iou_sum = 0.0
    n_match = 0
    n_gt = 0
    tracked: dict[int, list[bool]] = {}
    match_log = []

    for f in frames:
        g_ids, g_boxes = gt_frames.get(f, empty)
        r_ids, r_boxes = res_frames.get(f, empty)
        n_gt += len(g_ids)
        ov = iou_matrix(g_boxes, r_boxes)
        g_pos = {g: i for i, g in enumerate(g_ids)}
        r_pos = {r: j for j, r in enumerate(r_ids)}
        pairs = []
        used_g, used_r = set(), set()
        for g, r in last_match.items():
            if g in g_pos and r in r_pos and r not in used_r:
                i, j = g_pos[g], r_pos[r]
                if ov[i, j] >= iou_min:
                    pairs.append((i, j))
                    used_g.add(i)
                    used_r.add(j)
        free_g = [i for i in range(len(g_ids)) if i not in used_g]
        free_r = [j for j in range(len(r_ids)) if j not in used_r]
        if free_g and free_r:
            sub = ov[np.ix_(free_g, free_r)]
            cost = np.where(sub >= iou_min, -sub, 0.0)
            rows, cols = linear_sum_assignment(cost)
            for a, b in zip(rows, cols):
                if sub[a, b] >= iou_min:
                    pairs.append((free_g[a], free_r[b]))
        matched_g = set()
        for i, j in pairs:
            g, r = g_ids[i], r_ids[j]
            if g in last_match and last_match[g] != r:
                idsw += 1
            last_match[g] = r
            matched_g.add(i)
            iou_sum += ov[i, j]
            match_log.append((f, g, r, float(ov[i, j])))
        n_match += len(pairs)
        fp += len(r_ids) - len(pairs)
        fn += len(g_ids) - len(pairs)
        for i, g in enumerate(g_ids):
            tracked.setdefault(g, []).append(i in matched_g)

    mt = ml = frag = 0
    for seq in tracked.values():
        ratio = sum(seq) / len(seq)
        if ratio >= 0.8:
            mt += 1
        if ratio < 0.2:
            ml += 1
        seen = False
        gap = False
        for x in seq:
            if x:
                if gap and seen:
                    frag += 1
                seen, gap = True, False
            elif seen:
                gap = True

    idf1 = _idf1(res_frames, gt_frames, iou_min)
    n_tracks = len(tracked)
    return EvalReport(
        mota=1.0 - (fp + fn + idsw) / n_gt if n_gt else float("nan"),
        motp=float(iou_sum) / n_match if n_match else 0.0,
        idf1=idf1, fp=fp, fn=fn, idsw=idsw, frag=frag,
        mt=100.0 * mt / n_tracks if n_tracks else 0.0,
        ml=100.0 * ml / n_tracks if n_tracks else 0.0,
        num_gt=n_gt, num_matches=n_match, num_gt_tracks=n_tracks, matches=match_log)


def _idf1(res_frames, gt_frames, iou_min) -> float:
    gt_ids = sorted({g for ids, _ in gt_frames.values() for g in ids})
    res_ids = sorted({r for ids, _ in res_frames.values() for r in ids})
    n_gt = sum(len(ids) for ids, _ in gt_frames.values())
    n_res = sum(len(ids) for ids, _ in res_frames.values())
    if n_gt + n_res == 0:
        return 1.0
    if not gt_ids or not res_ids:
        return 0.0
    gi = {g: i for i, g in enumerate(gt_ids)}
    ri = {r: j for j, r in enumerate(res_ids)}
    overlap = np.zeros((len(gt_ids), len(res_ids)))
    for f, (g_list, g_boxes) in gt_frames.items():
        if f not in res_frames:
            continue
        r_list, r_boxes = res_frames[f]
        ov = iou_matrix(g_boxes, r_boxes) >= iou_min
        for a, b in zip(*np.nonzero(ov)):
            overlap[gi[g_list[a]], ri[r_list[b]]] += 1
    rows, cols = linear_sum_assignment(-overlap)
    idtp = overlap[rows, cols].sum()
    return float(2.0 * idtp / (n_gt + n_res))
