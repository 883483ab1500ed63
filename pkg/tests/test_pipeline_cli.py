import json
import pickle
import subprocess
import sys

import pytest

from hisp.cli import main
from hisp.config import ConfigError, RunConfig
from hisp.metrics import evaluate
from hisp.motio import read_tracks
from hisp.pipeline import Tracker, TrackerError, run_tracker
from hisp.simulator import preset, simulate


def test_defaults():
    c = RunConfig()
    assert (c.sigma_v, c.sigma_r, c.dt, c.survival_prob, c.detection_prob, c.clutter_mean) == (5, 6, 1, 0.99, 0.9, 10)
    assert (c.births_per_frame, c.prune_threshold, c.merge_distance, c.window, c.max_hypotheses) == (
        0.1, 1e-3, 4, 5, 10_000_000)
    assert c.birth_cov_diag == (100, 100, 25, 25, 20, 20)


def test_detection_must_be_less_likely_than_survival():
    with pytest.raises(ConfigError):
        RunConfig(detection_prob=0.99)


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("detection_prob = 0.8\nclutter_mean = 3.0\n")
    c = RunConfig.from_file(p, clutter_mean=5.0)
    assert (c.detection_prob, c.clutter_mean) == (0.8, 5.0)
    p.write_text("bogus = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_file(p)


def test_easy_scenario_end_to_end():
    sc = simulate(preset("easy", 1))
    cfg = RunConfig(detection_prob=0.95, clutter_mean=2.0, n_frames=sc.spec.n_frames)
    run = run_tracker(cfg, sc.detections)
    assert evaluate(run.result, sc.truth).mota >= 0.8
    d = run.diagnostics[-1]
    assert {"n_hypotheses", "weight_mass", "solver_optimal", "row_mass_max_error"} <= set(d)


def test_zero_detections(tmp_path):
    det = tmp_path / "det.txt"
    det.write_text("")
    out = tmp_path / "res.txt"
    run_tracker(RunConfig(det=str(det), out=str(out), n_frames=5))
    assert out.read_text() == ""


def test_runs_are_byte_identical(tmp_path):
    sc = simulate(preset("easy", 2, n_frames=40))
    paths = sc.write(tmp_path / "sc")
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}.txt"
        run_tracker(RunConfig(det=str(paths["det"]), out=str(out), detection_prob=0.95, clutter_mean=2.0))
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0]


def test_extraction_does_not_feed_back():
    sc = simulate(preset("hard", 3, n_frames=60))
    cfg = RunConfig(detection_prob=0.85, clutter_mean=10.0)
    with_ex, without = Tracker(cfg), Tracker(cfg.with_overrides(extract=False))
    for f in range(1, 61):
        dets = sc.detections.get(f, [])
        with_ex.step(f, dets)
        without.step(f, dets)
        assert pickle.dumps(with_ex.state) == pickle.dumps(without.state)


def test_errors_carry_the_frame():
    tracker = Tracker(RunConfig())
    with pytest.raises(TrackerError) as info:
        tracker.step(4, [])
    assert info.value.frame == 4


def test_cli_simulate_track_evaluate(tmp_path, capsys):
    assert main(["simulate", "--seed", "7", "--preset", "easy", "--out-dir", str(tmp_path)]) == 0
    res = tmp_path / "res.txt"
    assert main(["track", "--det", str(tmp_path / "det.txt"), "--out", str(res),
                 "--detection-prob", "0.95", "--clutter-mean", "2"]) == 0
    assert res.exists() and len(read_tracks(res)) > 0
    capsys.readouterr()
    assert main(["evaluate", "--res", str(res), "--gt", str(tmp_path / "gt.txt")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["mota"] >= 0.8


def test_cli_track_with_config_file(tmp_path):
    main(["simulate", "--preset", "easy", "--frames", "20", "--out-dir", str(tmp_path)])
    conf = tmp_path / "run.toml"
    conf.write_text('detection_prob = 0.95\nclutter_mean = 2.0\nappearance = "precomputed"\n'
                    f'features = "{tmp_path / "features.csv"}"\n')
    diag = tmp_path / "diag.jsonl"
    assert main(["track", "--config", str(conf), "--det", str(tmp_path / "det.txt"),
                 "--out", str(tmp_path / "res.txt"), "--diagnostics", str(diag)]) == 0
    lines = diag.read_text().splitlines()
    assert len(lines) == 20
    assert json.loads(lines[0])["frame"] == 1


def test_cli_inspect_and_sweep(tmp_path, capsys):
    main(["simulate", "--preset", "easy", "--frames", "10", "--out-dir", str(tmp_path)])
    capsys.readouterr()
    assert main(["inspect", "--det", str(tmp_path / "det.txt"), "--frames", "3:4"]) == 0
    records = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert [r["frame"] for r in records] == [3, 4]
    assert all("hypotheses" in r and "diagnostics" in r for r in records)
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--pd", "0.9", "--clutter", "1,2", "--frames", "15", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0].startswith("preset,seed,detection_prob,clutter_mean,mota")
    assert len(rows) == 3


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["track", "--det", "x", "--out", "y", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["track", "--det", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "r.txt")]) == 2
    det = tmp_path / "det.txt"
    det.write_text("")
    assert main(["track", "--det", str(det), "--out", str(tmp_path / "r.txt"), "--detection-prob", "0.995"]) == 1


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "hisp", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "track" in out.stdout
