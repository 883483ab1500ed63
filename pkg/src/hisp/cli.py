"""Command-line entry point: ``hisp track|simulate|evaluate|sweep|inspect``.

Exit codes: 0 on success, 1 on usage errors, 2 when a run fails.
Set ``HISP_LOG_LEVEL`` (e.g. ``DEBUG``) to change log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig
from .metrics import evaluate
from .motio import read_detections, read_tracks
from .pipeline import Tracker, make_appearance, run_tracker, snapshot_to_dict
from .simulator import preset, simulate

log = logging.getLogger("hisp")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


_OVERRIDES = {
    "sigma_v": float, "sigma_r": float, "survival_prob": float, "detection_prob": float,
    "clutter_mean": float, "births_per_frame": float, "prune_threshold": float,
    "merge_distance": float, "window": int, "max_hypotheses": int, "gate_threshold": float,
    "solver_timeout": float, "nms_threshold": float, "n_frames": int, "seed": int,
    "frame_width": float, "frame_height": float,
}


_CONFIG_FLAGS = set(_OVERRIDES) | {"appearance", "features", "image_dir", "feature_policy"}


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML file whose keys are RunConfig field names")
    for name, typ in _OVERRIDES.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    p.add_argument("--appearance", choices=["off", "precomputed", "histogram"])
    p.add_argument("--features", help="feature table for --appearance precomputed")
    p.add_argument("--image-dir", dest="image_dir", help="frame images for --appearance histogram")
    p.add_argument("--feature-policy", dest="feature_policy", choices=["last-match", "ema"])


def _load_config(args, **extra) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if k in _CONFIG_FLAGS and v is not None}
    overrides.update({k: v for k, v in extra.items() if v is not None})
    if args.config:
        return RunConfig.from_file(args.config, **overrides)
    return RunConfig.from_dict(overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hisp", description="Online multi-target tracking with the HISP filter.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("track", help="run the tracker on a MOT-format detection file")
    p.add_argument("--det", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics", help="per-frame diagnostics as JSON lines")
    _add_config_args(p)

    p = sub.add_parser("simulate", help="write a synthetic scenario (det.txt, gt.txt, features.csv)")
    p.add_argument("--preset", default="easy", choices=["easy", "hard", "crossing", "default"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", dest="out_dir", default=".")
    p.add_argument("--frames", type=int, help="override the number of frames")

    p = sub.add_parser("evaluate", help="score a result file against ground truth (JSON on stdout)")
    p.add_argument("--res", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", type=float, default=0.5)

    p = sub.add_parser("sweep", help="grid over detection probability and clutter rate; CSV of metrics")
    p.add_argument("--preset", default="easy", choices=["easy", "hard", "crossing", "default"])
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--pd", type=_floats, default=[0.8, 0.9, 0.95])
    p.add_argument("--clutter", type=_floats, default=[2.0, 10.0])
    p.add_argument("--frames", type=int)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    _add_config_args(p)

    p = sub.add_parser("inspect", help="dump hypotheses and weights per frame as JSON lines")
    p.add_argument("--det", required=True)
    p.add_argument("--frames", help="frame range a:b (inclusive)")
    p.add_argument("--out", help="JSON-lines path (stdout when omitted)")
    _add_config_args(p)
    return parser


def _cmd_track(args) -> int:
    config = _load_config(args, det=args.det, out=args.out, diagnostics=args.diagnostics)
    run = run_tracker(config)
    log.info("wrote %d rows for %d tracks to %s", len(run.result), len(run.result.labels), args.out)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    overrides = {"n_frames": args.frames} if args.frames else {}
    scenario = simulate(preset(args.preset, args.seed, **overrides))
    paths = scenario.write(args.out_dir)
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    report = evaluate(read_tracks(args.res), read_tracks(args.gt), args.iou)
    print(report.to_json())
    return EXIT_OK


def _cmd_sweep(args) -> int:
    base = _load_config(args)
    columns = ["preset", "seed", "detection_prob", "clutter_mean", "mota", "motp", "idf1",
               "fp", "fn", "idsw", "frag", "mt", "ml"]
    fh = Path(args.out).open("w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for pd, clutter, seed in itertools.product(args.pd, args.clutter, range(args.seeds)):
            overrides = dict(detection_prob=pd, clutter_mean=clutter)
            if args.frames:
                overrides["n_frames"] = args.frames
            scenario = simulate(preset(args.preset, seed, **overrides))
            config = base.with_overrides(detection_prob=pd, clutter_mean=clutter,
                                         n_frames=scenario.spec.n_frames)
            report = evaluate(run_tracker(config, scenario.detections).result, scenario.truth)
            s = report.summary()
            writer.writerow([args.preset, seed, pd, clutter] + [s[c] for c in columns[4:]])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def _frame_range(text):
    if not text:
        return None
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"--frames expects a:b, got {text!r}")
    return lo, hi


def _cmd_inspect(args) -> int:
    lo_hi = _frame_range(args.frames)
    config = _load_config(args, det=args.det)
    detections = read_detections(config.det)
    last = config.n_frames or max(detections, default=0)
    if lo_hi:
        last = min(last, lo_hi[1])
    tracker = Tracker(config, make_appearance(config))
    fh = Path(args.out).open("w") if args.out else sys.stdout
    try:
        for frame in range(1, last + 1):
            _, diag = tracker.step(frame, detections.get(frame, []))
            if lo_hi and frame < lo_hi[0]:
                continue
            record = snapshot_to_dict(tracker.state)
            record["diagnostics"] = diag
            fh.write(json.dumps(record) + "\n")
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


_COMMANDS = {"track": _cmd_track, "simulate": _cmd_simulate, "evaluate": _cmd_evaluate,
             "sweep": _cmd_sweep, "inspect": _cmd_inspect}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("HISP_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"hisp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"hisp {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.debug("run failed", exc_info=True)
        print(f"hisp {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
