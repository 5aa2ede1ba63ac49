"""Command line interface.

    evseg synth   --spec scene.cfg --out events.txt --gt gt.txt
    evseg segment --in events.txt [--config run.cfg] --out labels.txt
                  [--render-dir dir] [--<key>=<value> ...]
    evseg eval    --pred labels.txt --gt gt.txt --out report.txt
    evseg render  --in labels.txt --out iwe.ppm

Exit codes: 0 success, 2 parse/config error, 3 pipeline failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import evio
from .config import ConfigError, known_keys, load_config
from .events import accumulate_iwe
from .motion import FourParamMotion
from .features import InsufficientFeatures
from .level2 import EmptyPool
from .metrics import LengthMismatch, evaluate, format_report, format_report_csv
from .pipeline import PipelineError, segment_stream
from .synth import InvalidSpec, generate_scene

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PIPELINE = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evseg",
        description="Event-camera motion segmentation by two-level "
                    "multi-model fitting")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic event stream")
    p_synth.add_argument("--spec", required=True, help="scene spec file")
    p_synth.add_argument("--out", required=True, help="event output file")
    p_synth.add_argument("--gt", required=True, help="ground-truth output file")

    p_seg = sub.add_parser("segment", help="segment an event stream")
    p_seg.add_argument("--in", dest="infile", required=True)
    p_seg.add_argument("--config", default=None, help="key=value config file")
    p_seg.add_argument("--out", required=True, help="labeled event output")
    p_seg.add_argument("--render-dir", default=None,
                       help="write per-window renderings here")

    p_eval = sub.add_parser("eval", help="score labels against ground truth")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--out", required=True)

    p_render = sub.add_parser("render", help="render labeled events")
    p_render.add_argument("--in", dest="infile", required=True)
    p_render.add_argument("--out", required=True,
                          help=".ppm for labeled colors, .pgm for a count image")
    return parser


def _split_overrides(argv):
    """Separate --key=value config overrides from structural arguments."""
    keys = known_keys()
    rest, overrides = [], {}
    for arg in argv:
        if arg.startswith("--") and "=" in arg:
            key = arg[2:].split("=", 1)[0]
            if key in keys:
                overrides[key] = arg[2:].split("=", 1)[1]
                continue
        rest.append(arg)
    return rest, overrides


def _cmd_synth(args) -> int:
    spec = evio.parse_scene_spec(args.spec)
    window, gt = generate_scene(spec)
    evio.write_events(window, args.out)
    evio.write_ground_truth(window, gt.labels, gt.motions, args.gt)
    print(f"wrote {len(window)} events to {args.out}")
    return EXIT_OK


def _cmd_segment(args, overrides) -> int:
    cfg = load_config(args.config, overrides)
    windows = evio.parse_events(args.infile, cfg.delta_t_ms)
    if not windows:
        raise PipelineError("input stream contains no events")
    results = segment_stream(windows, cfg)
    out_labels = []
    for (labeling, _pool) in results:
        out_labels.append(labeling.labels)
    _write_sliced_labels(windows, out_labels, args.out)
    if args.render_dir:
        os.makedirs(args.render_dir, exist_ok=True)
        for i, (w, labels) in enumerate(zip(windows, out_labels)):
            evio.render_labeled_events(
                w, evio.canonical_labels(labels),
                os.path.join(args.render_dir, f"window_{i:03d}.ppm"))
            evio.render_iwe(
                accumulate_iwe(w, FourParamMotion()),
                os.path.join(args.render_dir, f"window_{i:03d}.pgm"))
    print(f"segmented {len(windows)} window(s) into {args.out}")
    return EXIT_OK


def _write_sliced_labels(windows, labels_per_window, path) -> None:
    first = windows[0]
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# {first.width} {first.height}\n")
        for w, labels in zip(windows, labels_per_window):
            canon = evio.canonical_labels(labels)
            for t, x, y, p, l in zip(w.ts, w.xs, w.ys,
                                     (w.ps > 0).astype(int), canon):
                fh.write(f"{t} {x} {y} {p} {l}\n")


def _cmd_eval(args) -> int:
    pred_window, pred_labels = evio.read_labeled_events(args.pred)
    gt_window, gt_labels = evio.read_labeled_events(args.gt)
    if len(pred_window) != len(gt_window):
        raise evio.ParseError("prediction and ground truth differ in size")
    report = evaluate(pred_labels, gt_labels, gt_window)
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write(format_report(report))
        fh.write(format_report_csv(report))
    print(format_report(report), end="")
    return EXIT_OK


def _cmd_render(args) -> int:
    window, labels = evio.read_labeled_events(args.infile)
    if args.out.endswith(".pgm"):
        evio.render_iwe(accumulate_iwe(window, FourParamMotion()), args.out)
    else:
        evio.render_labeled_events(window, labels, args.out)
    print(f"rendered {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    rest, overrides = _split_overrides(argv)
    try:
        args = _parser().parse_args(rest)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0,) else 0
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "segment":
            return _cmd_segment(args, overrides)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "render":
            return _cmd_render(args)
        return EXIT_INPUT
    except (evio.ParseError, ConfigError, InvalidSpec, LengthMismatch,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (PipelineError, InsufficientFeatures, EmptyPool) as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
