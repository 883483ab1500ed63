import math
import pickle

import numpy as np
import pytest

from hisp.core import ClutterRecord, DeadRecord, MultiTargetConfiguration
from hisp.extraction import (CLUTTER, DEAD, LIVE, Candidate, ExtractionProblem, LabelRegistry,
                             SelectedTrack, TrackExtractor, build_problem, resolve_labels, solve)

from oracles import exhaustive_extraction, make_hypothesis


def cand(cid, w, covered, kind=LIVE, hyp=None):
    return Candidate(cid, math.log(w), frozenset(covered), kind, hyp)


def problem(cands):
    return ExtractionProblem(cands, frozenset(m for c in cands for m in c.covered))


def tracked(hid, path, start, weight, origin=None):
    from dataclasses import replace
    h = make_hypothesis(hid, (100.0 * hid, 100, 30, 60), weight)
    return replace(h, path=tuple(path), path_start=start, origin=origin or (start, path[0]))


def test_no_detections_gives_empty_constraints():
    h = tracked(0, (None, None), 4, 0.5)
    c = MultiTargetConfiguration(frame=5, hypotheses=(h,), measurements=((4, ()), (5, ())))
    p = build_problem(c)
    assert p.candidates == []
    assert p.window_measurements == frozenset()
    assert solve(p).selected == frozenset()


def test_track_and_clutter_share_a_measurement():
    h = tracked(0, (0,), 5, 0.9)
    c = MultiTargetConfiguration(frame=5, hypotheses=(h,), clutter_records=(ClutterRecord(5, 0, 0.1),),
                                 measurements=((5, (0,)),))
    p = build_problem(c)
    assert [(x.kind, x.covered) for x in p.candidates] == [(LIVE, {(5, 0)}), (CLUTTER, {(5, 0)})]
    sol = solve(p)
    assert [p.candidates[i].kind for i in sol.selected] == [LIVE]


def test_recent_graveyard_is_a_candidate():
    h = tracked(0, (0, 0), 2, 0.4)
    c = MultiTargetConfiguration(frame=5, graveyard=(DeadRecord(h, 3, 0.3),),
                                 measurements=((2, (0,)), (3, (0,))))
    p = build_problem(c, window=5)
    assert [x.kind for x in p.candidates] == [DEAD]
    assert p.candidates[0].covered == {(2, 0), (3, 0)}


def test_empty_problem():
    sol = solve(ExtractionProblem([], frozenset()))
    assert sol.selected == frozenset()
    assert sol.objective == 0.0


def test_greedy_trap_is_solved_exactly():
    a, b, c, d = (1, 0), (1, 1), (2, 0), (2, 1)
    cands = [cand(0, 0.9, {a, b, c}), cand(1, 0.01, {d}), cand(2, 0.8, {a, b}),
             cand(3, 0.8, {c, d}), cand(4, 0.05, {a}, CLUTTER), cand(5, 0.1, {c}, CLUTTER)]
    p = problem(cands)
    # heaviest-first greedy takes candidate 0 and is then forced into candidate 1
    greedy = math.log(0.9) + math.log(0.01)
    best = exhaustive_extraction(p)
    assert best > greedy
    sol = solve(p)
    assert sol.selected == {2, 3}
    assert sol.objective == pytest.approx(best)


def random_problem(rng, n_cands=20):
    n_meas = int(rng.integers(3, 9))
    meas = [(1 + i // 3, i % 3) for i in range(n_meas)]
    cands = [cand(i, rng.uniform(0.01, 0.9), {m}, CLUTTER) for i, m in enumerate(meas)]
    while len(cands) < n_cands:
        k = int(rng.integers(1, min(4, n_meas) + 1))
        cover = {meas[i] for i in rng.choice(n_meas, size=k, replace=False)}
        cands.append(cand(len(cands), rng.uniform(0.001, 1.0), cover))
    return problem(cands)


def test_random_problems_match_exhaustive():
    rng = np.random.default_rng(8)
    for _ in range(25):
        p = random_problem(rng, int(rng.integers(5, 21)))
        sol = solve(p, timeout=None)
        assert sol.optimal
        assert sol.objective == pytest.approx(exhaustive_extraction(p), abs=1e-12)
        covered = [m for i in sol.selected for m in p.candidates[i].covered]
        assert sorted(covered) == sorted(p.window_measurements)


def test_label_conflict_keeps_heavier_track():
    reg = LabelRegistry()
    a = tracked(1, (0, 0), 1, 0.8, origin=(1, 0))
    b = tracked(2, (0, 1), 1, 0.6, origin=(1, 0))
    out = resolve_labels([SelectedTrack(0, b, 0.6), SelectedTrack(1, a, 0.8)], reg)
    labels = {s.hypothesis.id: s.label for s in out}
    assert labels[1] == 1
    assert labels[2] == 2
    # the reassignment sticks to the descendant
    from dataclasses import replace
    child = replace(b, id=7, parent=2)
    reg.propagate([child])
    assert reg.label_for(child) == 2


def test_distinct_labels_unchanged():
    reg = LabelRegistry()
    a = tracked(1, (0,), 1, 0.8, origin=(1, 0))
    b = tracked(2, (1,), 1, 0.6, origin=(1, 1))
    out = resolve_labels([SelectedTrack(0, a, 0.8), SelectedTrack(1, b, 0.6)], reg)
    assert [s.label for s in out] == [1, 2]


def test_label_tie_goes_to_lower_candidate_id():
    reg = LabelRegistry()
    a = tracked(1, (0,), 1, 0.7, origin=(1, 0))
    b = tracked(2, (0,), 1, 0.7, origin=(1, 0))
    out = resolve_labels([SelectedTrack(5, a, 0.7), SelectedTrack(3, b, 0.7)], reg)
    labels = {s.candidate_id: s.label for s in out}
    assert labels[3] == 1
    assert labels[5] == 2


def test_extraction_leaves_configuration_untouched():
    hyps = (tracked(0, (0, None, 1), 3, 0.9), tracked(1, (1, 0, 0), 3, 0.7), tracked(2, (None, 1, None), 3, 0.2))
    c = MultiTargetConfiguration(frame=5, hypotheses=hyps,
                                 clutter_records=tuple(ClutterRecord(f, i, 0.05) for f in (3, 4, 5) for i in (0, 1)),
                                 measurements=tuple((f, (0, 1)) for f in (3, 4, 5)))
    before = pickle.dumps(c)
    out = TrackExtractor(window=5).extract(c)
    assert pickle.dumps(c) == before
    assert len({t.label for t in out.tracks}) == len(out.tracks)
