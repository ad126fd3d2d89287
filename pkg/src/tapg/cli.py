"""Command-line entry point.

Subcommands: synth | train | infer | ensemble | eval. Every run is a pure
function of its config file, input files and seeds. Exit codes: 0 success,
1 validation/usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .boundary import build_boundary_map, load_heatmaps
from .config import PRESETS, load_config
from .data import ParseError, load_annotations
from .evaluation import (
    DEFAULT_TIOU_THRESHOLDS,
    evaluate,
    format_report_table,
    save_report,
)
from .model import load_model, save_model
from .pipeline import (
    infer_dataset,
    load_dataset,
    train_on_dataset,
    write_dataset,
)
from .postprocess import (
    WindowTiming,
    assign_classes,
    concat_ensemble,
    fuse_scores,
    load_detections,
    multiscale_route,
    save_detections,
    soft_nms,
    ensemble_maps,
)
from .relation import load_confidence_maps
from .synthetic import load_class_scores
from .training import save_loss_trace


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(f"error: {message}")


def _add_common(sub):
    sub.add_argument("--config", help="TOML config file layered over the preset")
    sub.add_argument("--preset", choices=PRESETS, default="desk")
    sub.add_argument("--seed", type=int, help="override the dataset seed")
    sub.add_argument("--out", required=True, help="output path")


def build_parser() -> _Parser:
    parser = _Parser(prog="tapg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    _add_common(p)

    p = sub.add_parser("train", help="fit the toy model on a dataset")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory from synth")
    p.add_argument("--trace", help="CSV loss trace path")

    p = sub.add_parser("infer", help="run inference and write detections")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--subset", default="validation", choices=["training", "validation", "all"])
    p.add_argument("--scale", type=int, help="rescale windows to this length")
    p.add_argument("--dump-dir", help="write per-video heatmap/confidence dumps here")

    p = sub.add_parser("ensemble", help="combine detection sets or map dumps")
    _add_common(p)
    p.add_argument("--mode", choices=["concat", "route", "maps"], default="concat")
    p.add_argument("inputs", nargs="*", help="detection files (concat) or dump dirs (maps)")
    p.add_argument("--weights", help="comma-separated map weights (maps mode)")
    p.add_argument("--scales", help="scale=file pairs, e.g. 30=a.json,80=b.json,100=c.json")
    p.add_argument("--annotations", help="annotation file (route and maps modes)")
    p.add_argument("--class-scores", help="class score file (maps mode)")

    p = sub.add_parser("eval", help="score detections against annotations")
    _add_common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--subset", default="validation", choices=["training", "validation", "all"])
    return parser


def _config(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.preset, args.config, overrides)


def cmd_synth(args) -> None:
    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)
    write_dataset(args.out, cfg)
    print(f"wrote dataset ({cfg.n_videos} videos) to {args.out}")


def cmd_train(args) -> None:
    cfg = _config(args)
    model, trace = train_on_dataset(args.data, cfg)
    save_model(args.out, model)
    if args.trace:
        save_loss_trace(args.trace, trace)
    print(
        f"trained {cfg.steps} steps: total loss {trace[0].total:.4f} -> {trace[-1].total:.4f}"
    )


def cmd_infer(args) -> None:
    cfg = _config(args)
    model = load_model(args.model)
    sequences, _ = load_dataset(args.data, args.subset)
    class_scores = load_class_scores(os.path.join(args.data, "class_scores.json"))
    if args.dump_dir:
        os.makedirs(args.dump_dir, exist_ok=True)
    dets = infer_dataset(
        model, sequences, class_scores, cfg, l_w=args.scale, dump_dir=args.dump_dir
    )
    save_detections(args.out, dets)
    total = sum(len(d) for d in dets.values())
    print(f"wrote {total} detections for {len(dets)} videos to {args.out}")


def _ensemble_concat(args, cfg) -> None:
    if not args.inputs:
        raise ValueError("concat mode needs at least one detection file")
    det_sets = [load_detections(path) for path in args.inputs]
    videos = sorted({vid for dets in det_sets for vid in dets})
    merged = {
        vid: concat_ensemble([d.get(vid, []) for d in det_sets], cfg.sigma_nms)
        for vid in videos
    }
    save_detections(args.out, merged, version="ensemble-concat")


def _ensemble_route(args, cfg) -> None:
    if not args.scales or not args.annotations:
        raise ValueError("route mode needs --scales and --annotations")
    by_scale = {}
    for pair in args.scales.split(","):
        scale, path = pair.split("=", 1)
        by_scale[int(scale)] = load_detections(path)
    annotations = load_annotations(args.annotations)
    videos = sorted({vid for dets in by_scale.values() for vid in dets})
    routed = {}
    for vid in videos:
        duration = annotations[vid].duration
        routed[vid] = multiscale_route(
            duration, {s: dets.get(vid, []) for s, dets in by_scale.items()}
        )
    save_detections(args.out, routed, version="ensemble-route")


def _ensemble_maps(args, cfg) -> None:
    if not args.inputs or not args.annotations or not args.class_scores:
        raise ValueError("maps mode needs dump dirs, --annotations and --class-scores")
    weights = (
        [float(w) for w in args.weights.split(",")]
        if args.weights
        else [1.0] * len(args.inputs)
    )
    if len(weights) != len(args.inputs):
        raise ValueError(f"{len(weights)} weights for {len(args.inputs)} inputs")
    annotations = load_annotations(args.annotations)
    class_scores = load_class_scores(args.class_scores)

    videos = sorted(
        vid
        for vid in annotations
        if os.path.exists(os.path.join(args.inputs[0], f"{vid}.heatmaps.json"))
    )
    out = {}
    for vid in videos:
        entries = []
        for dump_dir, weight in zip(args.inputs, weights):
            _, _, heat = load_heatmaps(os.path.join(dump_dir, f"{vid}.heatmaps.json"))
            _, maps = load_confidence_maps(
                os.path.join(dump_dir, f"{vid}.confmaps.json")
            )
            entries.append((build_boundary_map(heat, maps.cc.shape[0]), maps, weight))
        mb, maps = ensemble_maps(entries)
        length = maps.cc.shape[1]
        timing = WindowTiming(0.0, 1.0, annotations[vid].duration / length)
        props = fuse_scores(mb, maps, timing, top_k=cfg.top_k)
        props = soft_nms(props, cfg.sigma_nms, cfg.keep_threshold, cfg.max_keep)
        out[vid] = assign_classes(props, class_scores[vid], cfg.class_top_k)
    save_detections(args.out, out, version="ensemble-maps")


def cmd_ensemble(args) -> None:
    cfg = _config(args)
    {"concat": _ensemble_concat, "route": _ensemble_route, "maps": _ensemble_maps}[
        args.mode
    ](args, cfg)
    print(f"wrote ensembled detections to {args.out}")


def cmd_eval(args) -> None:
    dets = load_detections(args.detections)
    annotations = load_annotations(args.annotations)
    if args.subset != "all":
        annotations = {
            vid: ann for vid, ann in annotations.items() if ann.subset == args.subset
        }
    gts = {vid: ann.instances for vid, ann in annotations.items()}
    dets = {vid: dets.get(vid, []) for vid in gts}
    result = evaluate(dets, gts, DEFAULT_TIOU_THRESHOLDS)
    save_report(args.out, result)
    print(format_report_table(result))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 1
        return 0 if exc.code in (0, None) else 1

    commands = {
        "synth": cmd_synth,
        "train": cmd_train,
        "infer": cmd_infer,
        "ensemble": cmd_ensemble,
        "eval": cmd_eval,
    }
    try:
        commands[args.command](args)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
