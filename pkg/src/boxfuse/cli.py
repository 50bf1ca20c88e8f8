"""Command-line entry point: ``boxfuse <subcommand> ...``.

Every subcommand writes into ``--out DIR`` and echoes its effective
configuration there as ``config.json``. BOXFUSE_THREADS caps the number of
worker threads used for per-image work.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import nms as nms_mod
from .clustering import cluster_partitioned
from .evaluation import bench, default_thresholds, f_measure_svg, reports_csv, runner_names, sweep
from .fusion import AdamState, FusionModel, fuse, prepare_image, train
from .geometry import ImageMeta
from .io import (
    DetectionRecord,
    ParseError,
    RunConfig,
    atomic_write,
    cluster_json,
    load_config_file,
    parse_detections,
    write_detections,
)
from .synth import PerturbSpec, generate_dataset


class CliError(Exception):
    pass


def thread_count() -> int:
    raw = os.environ.get("BOXFUSE_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"BOXFUSE_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise CliError(f"BOXFUSE_THREADS must be a positive integer, got {raw!r}")
    return n


def map_images(fn: Callable, items: Sequence) -> list:
    """Ordered parallel map; output order never depends on scheduling."""
    n = min(thread_count(), max(len(items), 1))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


# ------------------------------------------------------------------ helpers


def _read(path: str) -> list[DetectionRecord]:
    if not Path(path).is_file():
        raise CliError(f"input file not found: {path}")
    try:
        return parse_detections(path)
    except ParseError as e:
        raise CliError(f"{path}: {e}") from None


def _config(args) -> RunConfig:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    cli = {k: getattr(args, k, None) for k in RunConfig.__dataclass_fields__}
    if cli.get("widths") is not None:
        cli["widths"] = tuple(cli["widths"])
    return RunConfig.resolve(file_values, cli)


def _echo(out: Path, command: str, cfg: Optional[RunConfig], params: dict) -> None:
    doc = {"command": command, "params": params}
    if cfg is not None:
        doc["run"] = json.loads(cfg.to_json())
    atomic_write(out / "config.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _align(preds: list[DetectionRecord], gts: list[DetectionRecord]) -> tuple[list, list]:
    """Pair images by id in ground-truth order; missing predictions count as empty."""
    by_id = {r.image_id: r.boxes for r in preds}
    extra = set(by_id) - {r.image_id for r in gts}
    if extra:
        raise CliError(f"predictions for images absent from ground truth: {', '.join(sorted(extra)[:5])}")
    return [by_id.get(g.image_id, []) for g in gts], [g.boxes for g in gts]


def _nms_params(args) -> dict:
    if args.algo == "locality":
        p = {"nms_threshold": args.iou if args.iou is not None else nms_mod.LOCALITY_NMS_THRESHOLD}
        p["merge_threshold"] = args.merge_iou if args.merge_iou is not None else nms_mod.LOCALITY_MERGE_THRESHOLD
        return p
    p = {"iou_threshold": args.iou if args.iou is not None else (0.3 if args.algo.startswith("soft") else 0.5)}
    if args.algo.startswith("soft"):
        p["sigma"] = args.sigma
        p["score_floor"] = args.score_floor
    return p


# ------------------------------------------------------------------ commands


def cmd_synth(args) -> None:
    cfg = _config(args)
    spec = PerturbSpec(
        boxes_per_instance=tuple(args.boxes_per_instance),
        shrink_range=tuple(args.shrink),
        crowded=args.crowded,
        seed=cfg.seed,
    )
    meta = ImageMeta(args.width, args.height)
    scenes = list(generate_dataset(spec, args.scenes, meta, tuple(args.instances), prefix=args.prefix))
    out = Path(args.out)
    write_detections(out / "detections.jsonl", [DetectionRecord(s.meta.image_id, s.meta.width, s.meta.height, s.dense) for s in scenes])
    write_detections(out / "ground_truth.jsonl", [DetectionRecord(s.meta.image_id, s.meta.width, s.meta.height, s.ground_truth) for s in scenes])
    params = {
        "scenes": args.scenes,
        "instances": list(args.instances),
        "width": args.width,
        "height": args.height,
        "boxes_per_instance": list(args.boxes_per_instance),
        "shrink": list(args.shrink),
        "crowded": args.crowded,
        "prefix": args.prefix,
        "perturb": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(spec).items()},
    }
    _echo(out, "synth", cfg, params)


def cmd_cluster(args) -> None:
    cfg = _config(args)
    recs = _read(args.input)
    groups = map_images(lambda r: cluster_partitioned(r.boxes, cfg.cluster_threshold, r.image_id), recs)
    lines = [cluster_json(c) + "\n" for cs in groups for c in cs]
    out = Path(args.out)
    atomic_write(out / "clusters.jsonl", "".join(lines))
    _echo(out, "cluster", cfg, {"input": args.input})


def cmd_nms(args) -> None:
    try:
        fn = nms_mod.get_algorithm(args.algo)
    except KeyError as e:
        raise CliError(str(e.args[0])) from None
    params = _nms_params(args)
    recs = _read(args.input)
    kept = map_images(lambda r: nms_mod.per_class(fn, r.boxes, **params), recs)
    out = Path(args.out)
    write_detections(out / "detections.jsonl", [DetectionRecord(r.image_id, r.width, r.height, k) for r, k in zip(recs, kept)])
    _echo(out, "nms", None, {"input": args.input, "algo": args.algo, **params})


def cmd_train(args) -> None:
    cfg = _config(args)
    dets, gts = _read(args.detections), _read(args.ground_truth)
    by_id = {r.image_id: r for r in dets}
    pairs = [(by_id[g.image_id], g) for g in gts if g.image_id in by_id]
    if not pairs:
        raise CliError("no image ids shared between detections and ground truth")
    images = map_images(
        lambda p: prepare_image(p[0].boxes, p[1].boxes, p[1].meta, cfg.node_count, cfg.cluster_threshold, cfg.adj_threshold, cfg.aggregation),
        pairs,
    )
    model = FusionModel.init(
        cfg.node_count,
        cfg.widths,
        seed=cfg.seed,
        adj_threshold=cfg.adj_threshold,
        cluster_threshold=cfg.cluster_threshold,
        aggregation=cfg.aggregation,
    )
    opt = AdamState(lr=cfg.lr, decay=cfg.lr_decay, decay_every=cfg.lr_decay_every)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss", "lr"])
    for step, loss, lr in train(model, opt, images, cfg.steps, cfg.batch_size, cfg.seed, cfg.loss_beta, cfg.loss_mode):
        w.writerow([step, f"{loss:.10g}", f"{lr:.10g}"])
    out = Path(args.out)
    atomic_write(out / "model.json", json.dumps(model.to_dict()) + "\n")
    atomic_write(out / "train_log.csv", buf.getvalue())
    _echo(out, "train", cfg, {"detections": args.detections, "ground_truth": args.ground_truth, "images": len(images)})


def _load_model(path: str) -> FusionModel:
    if not Path(path).is_file():
        raise CliError(f"model file not found: {path}")
    try:
        return FusionModel.load(path)
    except (ValueError, KeyError) as e:
        raise CliError(f"cannot load model {path}: {e}") from None


def cmd_fuse(args) -> None:
    model = _load_model(args.model)
    recs = _read(args.input)
    ct = args.cluster_threshold if args.cluster_threshold is not None else model.cluster_threshold
    at = args.adj_threshold if args.adj_threshold is not None else model.adj_threshold
    for name, v in (("cluster_threshold", ct), ("adj_threshold", at)):
        if not 0.0 < v < 1.0:
            raise CliError(f"{name} must lie in (0, 1), got {v}")
    fused = map_images(lambda r: fuse(model, r.boxes, r.meta, ct, at), recs)
    out = Path(args.out)
    write_detections(out / "detections.jsonl", [DetectionRecord(r.image_id, r.width, r.height, f) for r, f in zip(recs, fused)])
    _echo(out, "fuse", None, {"model": args.model, "input": args.input, "cluster_threshold": ct, "adj_threshold": at})


def _check_thresholds(ts: Sequence[float]) -> list[float]:
    for t in ts:
        if not 0.0 < t < 1.0:
            raise CliError(f"IoU thresholds must lie in (0, 1), got {t}")
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise CliError("IoU thresholds must be strictly increasing")
    return list(ts)


def cmd_eval(args) -> None:
    thresholds = _check_thresholds(sorted(set(args.iou)))
    preds, gts = _align(_read(args.pred), _read(args.gt))
    report = sweep(preds, gts, thresholds, algorithm=args.name)
    out = Path(args.out)
    atomic_write(out / "report.csv", report.to_csv())
    atomic_write(out / "report.json", json.dumps(report.to_dict(), indent=2) + "\n")
    _echo(out, "eval", None, {"pred": args.pred, "gt": args.gt, "iou": thresholds, "name": args.name})


def _named(spec: str) -> tuple[str, str]:
    if "=" in spec:
        name, path = spec.split("=", 1)
        return name, path
    return Path(spec).stem, spec


def cmd_sweep(args) -> None:
    if not args.step > 0 or not args.min <= args.max:
        raise CliError("sweep needs step > 0 and min <= max")
    thresholds = _check_thresholds(default_thresholds(args.min, args.max, args.step))
    gts = _read(args.gt)
    reports = []
    for name, path in map(_named, args.pred):
        preds, g = _align(_read(path), gts)
        reports.append(sweep(preds, g, thresholds, algorithm=name))
    out = Path(args.out)
    atomic_write(out / "sweep.csv", reports_csv(reports))
    atomic_write(out / "sweep.json", json.dumps([r.to_dict() for r in reports], indent=2) + "\n")
    atomic_write(out / "f_measure.svg", f_measure_svg(reports))
    _echo(out, "sweep", None, {"pred": args.pred, "gt": args.gt, "min": args.min, "max": args.max, "step": args.step})


def cmd_bench(args) -> None:
    names = args.algo or [n for n in runner_names() if n != "gfnet" or args.model]
    valid = runner_names()
    for n in names:
        if n not in valid:
            raise CliError(f"unknown algorithm {n!r}; valid names: {', '.join(valid)}")
    if args.repetitions < 3:
        raise CliError(f"repetitions must be >= 3, got {args.repetitions}")
    model = _load_model(args.model) if args.model else None
    if "gfnet" in names and model is None:
        raise CliError("the gfnet benchmark needs --model")
    inputs = [(r.boxes, r.meta) for r in _read(args.input)]
    rows = []
    for n in names:
        rows.extend(bench(n, inputs, args.repetitions, model=model).to_rows())
    buf = io.StringIO()
    cols = ["algorithm", "input", "median_ms", "q1_ms", "q3_ms", "iqr_ms", "repetitions"]
    w = csv.DictWriter(buf, cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in r.items()})
    out = Path(args.out)
    atomic_write(out / "bench.csv", buf.getvalue())
    atomic_write(out / "bench.json", json.dumps(rows, indent=2) + "\n")
    _echo(out, "bench", None, {"input": args.input, "algo": names, "repetitions": args.repetitions, "model": args.model})


# ------------------------------------------------------------------ parser


def _add_run_flags(p: argparse.ArgumentParser, training: bool = False) -> None:
    # defaults stay None so a config file can fill the gaps
    p.add_argument("--config", help="JSON file with run-config values (CLI flags win)")
    p.add_argument("--seed", type=int)
    p.add_argument("--cluster-threshold", dest="cluster_threshold", type=float)
    if training:
        p.add_argument("--adj-threshold", dest="adj_threshold", type=float)
        p.add_argument("--node-count", dest="node_count", type=int)
        p.add_argument("--loss-beta", dest="loss_beta", type=float)
        p.add_argument("--loss-mode", dest="loss_mode", choices=["continuous", "paper_literal"])
        p.add_argument("--aggregation", choices=["hadamard", "matmul"])
        p.add_argument("--lr", type=float)
        p.add_argument("--lr-decay", dest="lr_decay", type=float)
        p.add_argument("--lr-decay-every", dest="lr_decay_every", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--widths", type=int, nargs=4, metavar="W")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="boxfuse", description="Fuse or suppress dense oriented detection boxes.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic ground truth and dense detections")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--instances", type=int, nargs=2, default=[2, 5], metavar=("LO", "HI"))
    p.add_argument("--width", type=float, default=1000)
    p.add_argument("--height", type=float, default=1000)
    p.add_argument("--boxes-per-instance", dest="boxes_per_instance", type=int, nargs=2, default=[20, 40], metavar=("LO", "HI"))
    p.add_argument("--shrink", type=float, nargs=2, default=[0.4, 1.0], metavar=("LO", "HI"))
    p.add_argument("--crowded", action="store_true")
    p.add_argument("--prefix", default="img")
    _add_run_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="run locality-aware clustering and dump clusters")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    _add_run_flags(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("nms", help="apply an NMS baseline")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--algo", default="standard", help=f"one of: {', '.join(sorted(nms_mod.ALGORITHMS))}")
    p.add_argument("--iou", type=float, help="suppression threshold (second-pass threshold for locality)")
    p.add_argument("--merge-iou", dest="merge_iou", type=float, help="locality merge threshold")
    p.add_argument("--sigma", type=float, default=nms_mod.SOFT_SIGMA)
    p.add_argument("--score-floor", dest="score_floor", type=float, default=nms_mod.SOFT_SCORE_FLOOR)
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("train", help="train the fusion network")
    p.add_argument("--detections", required=True)
    p.add_argument("--ground-truth", dest="ground_truth", required=True)
    p.add_argument("--out", required=True)
    _add_run_flags(p, training=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", help="fuse detections with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cluster-threshold", dest="cluster_threshold", type=float)
    p.add_argument("--adj-threshold", dest="adj_threshold", type=float)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="precision / recall / F-measure at given IoU thresholds")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iou", type=float, nargs="+", default=[0.5])
    p.add_argument("--name", default="pred")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="F-measure over a range of IoU thresholds, with an SVG chart")
    p.add_argument("--pred", required=True, action="append", help="[NAME=]PATH, repeatable")
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min", type=float, default=0.5)
    p.add_argument("--max", type=float, default=0.8)
    p.add_argument("--step", type=float, default=0.05)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="wall-clock timing of post-processing algorithms")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--algo", action="append", help="repeatable; default: every baseline (plus gfnet with --model)")
    p.add_argument("--model")
    p.add_argument("--repetitions", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CliError as e:
        print(f"boxfuse {args.command}: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"boxfuse {args.command}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
