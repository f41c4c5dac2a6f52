"""Command-line entry point.

Subcommands: upperbound, stats, sample, eval, gen-synth, train, infer.
Exit codes: 0 success, 2 configuration error, 3 I/O or parse error,
4 contract violation.  Reports are JSON; run metadata such as timestamps and
wall time live under ``"meta"`` so the rest is reproducible byte for byte.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tnsr
from .analysis import Scene, iou_avg_topk, upper_bound
from .config import RunConfig, config_hash
from .errors import BoxDenoiseError, ConfigError, ContractViolation, ParseError
from .evalkit import Detection, GroundTruth, evaluate_table
from .featurize import FeatureMap
from .geom3d import Box3D, CameraModel, project_box2d
from .kitti_io import (
    CLASSES,
    box_to_record,
    parse_calib_file,
    parse_label_file,
    read_dir,
    record_to_box,
    write_predictions,
)
from .sampler import GridSpec, sample_proposals
from .synthgen import generate_scene, write_scene

log = logging.getLogger("boxdenoise3d")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CONTRACT = 0, 2, 3, 4


def worker_count() -> int:
    env = os.environ.get("BOXDENOISE3D_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"BOXDENOISE3D_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("BOXDENOISE3D_THREADS must be positive")
        return n
    return os.cpu_count() or 1


def pool_map(fn: Callable, items: Sequence) -> list:
    """Map over a bounded thread pool; results keep input order."""
    n = min(worker_count(), max(len(items), 1))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- data loading


class Frame:
    """One image's worth of inputs, loaded from disk or synthesized."""

    def __init__(self, frame, cam, gts=None, anchors=None, fm=None):
        self.frame = frame
        self.cam = cam
        self.gts: Optional[list[GroundTruth]] = gts
        self.anchors: list[Box3D] = anchors or []
        self.fm: Optional[FeatureMap] = fm

    def scene(self) -> Scene:
        return Scene(self.gts or [], [Detection.from_box(a, self.cam) for a in self.anchors], self.cam, self.frame)


def _require_dir(path: Optional[Path], what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} directory configured (set data.root or data.{what}_dir)")
    if not path.is_dir():
        raise FileNotFoundError(f"{what} directory {path} does not exist")
    return path


def load_frames(cfg: RunConfig, need_labels=True, need_preds=True, need_features=False) -> list[Frame]:
    d = cfg.data
    calibs = read_dir(_require_dir(d.resolve("calib"), "calib"))
    labels = read_dir(_require_dir(d.resolve("label"), "label")) if need_labels else {}
    preds = read_dir(_require_dir(d.resolve("pred"), "pred")) if need_preds else {}
    feat_dir = _require_dir(d.resolve("feature"), "feature") if need_features else None
    frames = sorted(labels) if need_labels else sorted(preds)

    def load(fid: str) -> Frame:
        if fid not in calibs:
            raise FileNotFoundError(f"no calibration for frame {fid}")
        cam = parse_calib_file(calibs[fid], image_size=tuple(d.image_size))
        gts = [GroundTruth.from_record(r) for r in parse_label_file(labels[fid])] if need_labels else None
        anchors = []
        if need_preds:
            anchors = [record_to_box(r) for r in parse_label_file(preds.get(fid, "")) if r.type in CLASSES]
        fm = None
        if feat_dir is not None:
            data = tnsr.load(feat_dir / f"{fid}.tnsr").astype(np.float64)
            fm = FeatureMap(data, d.feature_stride, tuple(d.image_size))
        return Frame(fid, cam, gts, anchors, fm)

    return pool_map(load, frames)


def synthetic_frames(cfg: RunConfig, count: int, start: int = 0) -> list[Frame]:
    scfg = replace(cfg.synth, seed=cfg.seed)
    scenes = pool_map(lambda i: generate_scene(scfg, i), list(range(start, start + count)))
    return [Frame(s.frame, s.cam, s.gts, s.anchors, s.fm) for s in scenes]


def get_frames(cfg: RunConfig, args, **need) -> list[Frame]:
    if getattr(args, "synthetic", None):
        return synthetic_frames(cfg, args.synthetic, getattr(args, "start", 0) or 0)
    return load_frames(cfg, **need)


# ---------------------------------------------------------------- reports


def emit(report: dict, cfg: RunConfig, out: Optional[str], t0: float) -> None:
    doc = {
        "config_hash": config_hash(cfg),
        "result": report,
        "meta": {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"), "seconds": round(time.perf_counter() - t0, 3)},
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _grid_specs(cfg: RunConfig, strides) -> list[GridSpec]:
    if strides:
        return [GridSpec(cfg.grid.range_m, s) for s in strides]
    return [cfg.grid.spec]


# ---------------------------------------------------------------- commands


def cmd_upperbound(cfg: RunConfig, args) -> dict:
    frames = get_frames(cfg, args)
    scenes = [f.scene() for f in frames]
    rows = []
    for spec in _grid_specs(cfg, args.strides):
        rep = upper_bound(scenes, spec, k=cfg.eval.k, category=cfg.eval.category, iou_threshold=cfg.eval.iou_threshold,
                          with_stats=not args.no_stats)
        d = rep.to_dict()
        d.pop("best_iou_per_gt")
        rows.append(d)
    return {"frames": len(frames), "rows": rows}


def cmd_stats(cfg: RunConfig, args) -> dict:
    frames = get_frames(cfg, args, need_labels=False)
    label = CLASSES.index(cfg.eval.category)
    out = []
    for spec in _grid_specs(cfg, args.strides):
        # cameras may differ per frame: average frames weighted by proposal count
        vals, weights = [], []
        for f in frames:
            groups = [sample_proposals(a, spec) for a in f.anchors if a.label == label]
            if groups:
                vals.append(iou_avg_topk(groups, f.cam, cfg.eval.k))
                weights.append(len(groups) * spec.count)
        mean = float(np.average(vals, weights=weights)) if vals else None
        out.append({"range_m": spec.range_m, "stride_m": spec.stride_m, "proposals_per_anchor": spec.count,
                    "proposals": int(sum(weights)), "k": cfg.eval.k, "mean_iou_avg_k": mean})
    return {"frames": len(frames), "rows": out}


def cmd_sample(cfg: RunConfig, args) -> dict:
    cam = parse_calib_file(Path(args.calib).read_text(), image_size=tuple(cfg.data.image_size))
    anchors = [record_to_box(r) for r in parse_label_file(Path(args.anchors).read_text()) if not r.is_dont_care]
    spec = cfg.grid.spec
    recs = []
    for a in anchors:
        for p in sample_proposals(a, spec):
            recs.append(box_to_record(p, project_box2d(cam, p)))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(write_predictions(recs))
    return {"anchors": len(anchors), "proposals": len(recs), "proposals_per_anchor": spec.count, "out": str(args.out)}


def cmd_eval(cfg: RunConfig, args) -> dict:
    frames = load_frames(cfg)
    images = [([Detection.from_box(a, f.cam) for a in f.anchors], f.gts) for f in frames]
    return {"frames": len(frames), "category": cfg.eval.category, "iou_threshold": cfg.eval.iou_threshold,
            "ap": evaluate_table(images, cfg.eval.category, cfg.eval.iou_threshold)}


def cmd_gensynth(cfg: RunConfig, args) -> dict:
    scfg = replace(cfg.synth, seed=cfg.seed)
    idx = list(range(args.start, args.start + args.count))

    def one(i):
        sc = generate_scene(scfg, i)
        write_scene(sc, args.out, with_features=not args.no_features)
        return len(sc.gts)

    counts = pool_map(one, idx)
    return {"scenes": len(idx), "objects": int(sum(counts)), "out": str(args.out), "synth": scfg.to_dict()}


def _proposal_sets(cfg: RunConfig, frames: list[Frame]):
    from .neural.data import build_proposal_set

    match = replace(cfg.match, image_size=tuple(cfg.data.image_size))
    for f in frames:
        if f.fm is None:
            raise ContractViolation(f"frame {f.frame} has no feature map")
        if f.fm.channels != cfg.model.channels:
            raise ContractViolation(f"feature maps have {f.fm.channels} channels, model expects {cfg.model.channels}")
    return pool_map(lambda f: build_proposal_set(f.gts or [], f.anchors, f.cam, f.fm, cfg.grid.spec, match, f.frame), frames)


def cmd_train(cfg: RunConfig, args) -> dict:
    from .neural.train import history_dicts, save_checkpoint, train

    frames = get_frames(cfg, args, need_features=True)
    sets = _proposal_sets(cfg, frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)

    def on_epoch(epoch, model, entry):
        save_checkpoint(model, out / f"epoch_{epoch + 1:02d}", {"config_hash": chash, "epoch": epoch + 1})

    tcfg = replace(cfg.train, seed=cfg.seed)
    res = train(sets, cfg.model, cfg.loss, cfg.optim, tcfg, on_epoch=on_epoch)
    save_checkpoint(res.model, out / "final", {"config_hash": chash, "epoch": tcfg.epochs})
    hist = history_dicts(res.history)
    for h in hist:
        h.pop("seconds")
    return {"scenes": len(sets), "proposals": int(sum(len(s) for s in sets)), "history": hist,
            "checkpoint": str(out / "final")}


def cmd_infer(cfg: RunConfig, args) -> dict:
    from .neural.train import center_errors, infer, load_checkpoint

    model = load_checkpoint(args.checkpoint)
    have_labels = bool(getattr(args, "synthetic", None)) or cfg.data.resolve("label") is not None
    frames = get_frames(cfg, args, need_labels=have_labels, need_features=True)
    sets = _proposal_sets(cfg, frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    refined_images, raw_images, errs = [], [], []
    n_out = 0
    for f, s in zip(frames, sets):
        boxes = infer(model, s, args.top_k, args.threshold)
        errs.append(center_errors(model, s))
        recs = [box_to_record(b, project_box2d(f.cam, b)) for b in boxes]
        (out / f"{f.frame}.txt").write_text(write_predictions(recs))
        n_out += len(recs)
        if f.gts is not None:
            refined_images.append(([Detection.from_box(b, f.cam) for b in boxes], f.gts))
            raw_images.append(([Detection.from_box(a, f.cam) for a in f.anchors], f.gts))
    report = {"frames": len(frames), "predictions": n_out, "out": str(out)}
    if refined_images:
        cat, thr = cfg.eval.category, cfg.eval.iou_threshold
        report["anchor_ap"] = evaluate_table(raw_images, cat, thr)
        report["refined_ap"] = evaluate_table(refined_images, cat, thr)
        e = np.concatenate(errs) if errs else np.zeros((0, 2))
        if len(e):
            report["center_error_m"] = {"anchor": round(float(e[:, 0].mean()), 6), "refined_top1": round(float(e[:, 1].mean()), 6)}
    return report


# ---------------------------------------------------------------- argparse


def _add_common(p: argparse.ArgumentParser, data=True, synth=True) -> None:
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int, help="root seed (overrides config)")
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    if data:
        p.add_argument("--data", help="KITTI-style root with label_2/, calib/, pred/, features/")
    if synth:
        p.add_argument("--synthetic", type=int, metavar="N", help="use N seeded synthetic scenes instead of files")
        p.add_argument("--start", type=int, default=0, help="index of the first synthetic scene")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="boxdenoise3d", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("upperbound", help="oracle AP of grid proposals around anchors")
    _add_common(p)
    p.add_argument("--strides", type=float, nargs="+", help="grid strides to report (default: grid.stride_m)")
    p.add_argument("--no-stats", action="store_true", help="skip the IoU_avg^k statistic")
    p.set_defaults(func=cmd_upperbound)

    p = sub.add_parser("stats", help="mean top-k 2D IoU among sibling proposals")
    _add_common(p)
    p.add_argument("--strides", type=float, nargs="+")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sample", help="write grid proposals for an anchor file")
    _add_common(p, data=False, synth=False)
    p.add_argument("--anchors", required=True, help="KITTI prediction file")
    p.add_argument("--calib", required=True, help="KITTI calibration file")
    p.add_argument("--out", required=True, help="output proposal file")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="AP_R40 of predictions against labels")
    _add_common(p, synth=False)
    p.add_argument("--preds", help="prediction directory (default: <data>/pred)")
    p.add_argument("--labels", help="label directory (default: <data>/label_2)")
    p.add_argument("--calib", help="calibration directory (default: <data>/calib)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-synth", help="write seeded synthetic scenes in KITTI layout")
    _add_common(p, data=False, synth=False)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--no-features", action="store_true")
    p.set_defaults(func=cmd_gensynth)

    p = sub.add_parser("train", help="train the verification network")
    _add_common(p)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="refine anchors with a trained checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint path without suffix")
    p.add_argument("--out", required=True, help="directory for refined prediction files")
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--threshold", type=float, default=0.03)
    p.set_defaults(func=cmd_infer)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "data", None):
        overrides.append(f"data.root={json.dumps(args.data)}")
    for flag, key in (("preds", "pred_dir"), ("labels", "label_dir"), ("calib", "calib_dir")):
        val = getattr(args, flag, None)
        if val and args.command == "eval":
            overrides.append(f"data.{key}={json.dumps(val)}")
    return cfg.with_overrides(overrides) if overrides else cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = resolve_config(args)
        report = args.func(cfg, args)
        emit(report, cfg, args.report, t0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ParseError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except BoxDenoiseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
