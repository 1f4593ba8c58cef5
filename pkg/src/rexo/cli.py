"""Command line harness: simulate scenes, run box-diffusion inference, evaluate and plot.

Every subcommand is deterministic given the config and seed.  Frames are
processed by a bounded thread pool (size from ``REXO_NUM_WORKERS``), results
come back in frame order, and all files are written from the main thread.

Exit status: 0 on success, 1 on a runtime failure, 2 for an invalid config
or missing inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .assignment import match_and_loss
from .association import build_pyramid
from .config import ConfigError, RunConfig, load_config, validate
from .detectors import CentroidDetector, OracleDetector
from .diffusion import build_schedule, tau_subsequence
from .geometry import BehindCameraError, Box3D, apply_refinement_offsets, project_box, project_to_views_batch
from .metrics import evaluate, iou_histogram, read_histogram_csv, write_histogram_csv, write_metrics
from .pipeline import InferenceTrace, denoising_det, pad_and_diffuse, run_inference
from .plots import heatmap_image, heatmap_svg, histogram_svg, png_bytes
from .radarsim import VIEWS, RadarFrameSet, read_heatmap, view_grids, write_heatmap
from .scenes import make_suite, render
from .structures import Annotation, Detection, boxes3d

log = logging.getLogger("rexo")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
LOSS_FIELDS = ("cls", "giou3d", "l1_3d", "giou2d", "l1_2d", "total")


class InputError(Exception):
    """A required input file or directory is missing."""


# --------------------------------------------------------------------------
# plumbing


def num_workers() -> int:
    raw = os.environ.get("REXO_NUM_WORKERS")
    if raw is None or raw == "":
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError([(None, "REXO_NUM_WORKERS", f"must be a positive integer, got {raw!r}")])
    return n


def ordered_map(fn, items, workers: int):
    """Yield ``fn(item)`` in input order, keeping at most ``2 * workers`` results in flight."""
    items = list(items)
    if workers <= 1:
        for it in items:
            yield fn(it)
        return
    chunk = 2 * workers
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for k in range(0, len(items), chunk):
            yield from pool.map(fn, items[k : k + chunk])


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(_dump(r) + "\n")


def read_jsonl(path: Path) -> list:
    if not path.is_file():
        raise InputError(f"{path} not found")
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def heatmap_path(data: Path, frame_id: int, view: str) -> Path:
    return data / "heatmaps" / f"frame_{frame_id:05d}_{view}.rxh"


def frame_ids(data: Path) -> list:
    hdir = data / "heatmaps"
    if not hdir.is_dir():
        raise InputError(f"{hdir} not found (run `rexo simulate` first)")
    ids = sorted(int(p.name[6:11]) for p in hdir.glob("frame_*_horizontal.rxh"))
    if not ids:
        raise InputError(f"no heatmaps in {hdir}")
    return ids


def load_frames(data: Path, frame_id: int, cfg: RunConfig) -> RadarFrameSet:
    maps = {}
    for v in VIEWS:
        p = heatmap_path(data, frame_id, v)
        if not p.is_file():
            raise InputError(f"{p} not found")
        maps[v] = read_heatmap(p)
    shape = maps["horizontal"].shape[1:]
    return RadarFrameSet(maps["horizontal"], maps["vertical"], view_grids(cfg.bounds, shape))


def load_annotations(path: Path) -> dict:
    by_frame = defaultdict(list)
    for r in read_jsonl(path):
        a = Annotation.from_dict(r)
        by_frame[a.frame_id].append(a)
    return by_frame


def make_detector(cfg: RunConfig, gts: list, seed: int):
    if cfg.detector.kind == "oracle":
        return OracleDetector(gts, eta0=cfg.detector.eta0, seed=seed)
    params = {k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.detector.params.items()}
    return CentroidDetector(**params)


def detector_record(cfg: RunConfig) -> dict:
    if cfg.detector.kind == "oracle":
        return {"kind": "oracle", "eta0": cfg.detector.eta0}
    return {"kind": "centroid", "params": make_detector(cfg, [], 0).to_dict()}


# --------------------------------------------------------------------------
# stages


def simulate(cfg: RunConfig, out: Path, workers: int = 1) -> int:
    """Write scenes, annotations and per-view heatmaps for ``cfg.n_frames`` frames."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "heatmaps").mkdir(exist_ok=True)
    scenes = make_suite(cfg.n_frames, cfg.seed, cfg.scene)

    def job(scene):
        return render(scene, cfg.renderer, cfg.M, cfg.bounds, cfg.heatmap_shape)

    for scene, frames in zip(scenes, ordered_map(job, scenes, workers)):
        for v in VIEWS:
            write_heatmap(heatmap_path(out, scene.frame_id, v), frames.view(v))
    write_jsonl(
        out / "scatterers.jsonl",
        (
            {
                "frame_id": s.frame_id,
                "scatterers": [{"position": list(p.position), "reflectivity": p.reflectivity} for p in s.scatterers],
            }
            for s in scenes
        ),
    )
    write_jsonl(out / "annotations.jsonl", (a.to_dict() for s in scenes for a in s.annotations(cfg.calib)))
    write_json(out / "simulation.json", {"config": config_record(cfg), "version": __version__})
    log.info("simulated %d frames into %s", len(scenes), out)
    return len(scenes)


def _predictions(x0_phys, sc, o2, calib, frame_id) -> list:
    preds = []
    for i in range(len(x0_phys)):
        box = Box3D.from_array(x0_phys[i])
        try:
            b2 = apply_refinement_offsets(project_box(box, calib), o2[i])
        except BehindCameraError:
            continue
        preds.append(Detection(box, b2, tuple(sc[i]), frame_id))
    return preds


def training_loss(cfg: RunConfig, gts, pyramids, detector, schedule, seed: int, frame_id: int) -> dict:
    """Noise the padded ground truth to ``train_t``, run one detector pass and score it with the set loss."""
    rng = np.random.default_rng([seed, frame_id, 0, 1])
    x_t = pad_and_diffuse(gts, cfg.N_train, cfg.train_t, schedule, cfg.bounds, rng)
    ic = cfg.inference
    _, sc, _, x0_phys, o2 = denoising_det(
        x_t, cfg.train_t, pyramids, detector, cfg.bounds, cfg.calib, ic.r, ic.embed_dim, ic.grounding
    )
    preds = _predictions(x0_phys, sc, o2, cfg.calib, frame_id)
    row = {"frame_id": frame_id, "n_gt": len(gts), "n_pred": len(preds)}
    if len(preds) < len(gts):
        row.update({k: float("nan") for k in LOSS_FIELDS})
        return row
    _, lb = match_and_loss(preds, gts, cfg.loss_weights, cfg.bounds, (cfg.calib.image_w, cfg.calib.image_h))
    row.update(lb.to_dict())
    return row


def infer(cfg: RunConfig, data: Path, workers: int = 1, with_loss: bool = True):
    """Run inference over every simulated frame; returns ``(detections, loss rows, totals)``."""
    ids = frame_ids(data)
    gts = load_annotations(data / "annotations.jsonl")
    ic = cfg.inference
    schedule = build_schedule(ic.T, ic.schedule)
    taus = tau_subsequence(ic.T, ic.steps)

    def job(fid):
        frames = load_frames(data, fid, cfg)
        pyr = build_pyramid(frames, ic.L)
        det = make_detector(cfg, gts.get(fid, []), cfg.seed)
        trace = InferenceTrace()
        dets = run_inference(
            frames, det, cfg.calib, ic, cfg.bounds, cfg.seed, fid, schedule, taus, pyr, trace
        )
        loss = training_loss(cfg, gts.get(fid, []), pyr, det, schedule, cfg.seed, fid) if with_loss else None
        return dets, loss, trace

    dets, losses = [], []
    totals = {"behind_camera": 0, "suppressed": 0, "renewed": 0}
    for d, loss, tr in ordered_map(job, ids, workers):
        dets.extend(d)
        if loss is not None:
            losses.append(loss)
        for k in totals:
            totals[k] += getattr(tr, k)
    return dets, losses, totals


def config_record(cfg: RunConfig) -> dict:
    """The config as echoed into outputs; the output location is left out so runs compare byte for byte."""
    d = cfg.to_dict()
    d.pop("output_dir")
    return d


def manifest(cfg: RunConfig, n_frames: int, totals: dict) -> dict:
    ic = cfg.inference
    return {
        "seed": cfg.seed,
        "T": ic.T,
        "steps": ic.steps,
        "N": ic.N,
        "threshold": ic.threshold,
        "schedule": ic.schedule,
        "detector": detector_record(cfg),
        "scale": cfg.bounds.scale,
        "bounds": cfg.bounds.to_dict(),
        "n_frames": n_frames,
        "counters": totals,
        "config": config_record(cfg),
        "version": __version__,
    }


def write_loss_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("frame_id", "n_gt", "n_pred") + LOSS_FIELDS)
        for r in rows:
            w.writerow([r["frame_id"], r["n_gt"], r["n_pred"]] + [f"{r[k]:.6f}" for k in LOSS_FIELDS])


def write_inference(cfg: RunConfig, data: Path, out: Path, workers: int) -> list:
    dets, losses, totals = infer(cfg, data, workers)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "detections.jsonl", (d.to_dict() for d in dets))
    write_loss_csv(out / "loss.csv", losses)
    write_json(out / "manifest.json", manifest(cfg, len(frame_ids(data)), totals))
    log.info("%d detections written to %s", len(dets), out / "detections.jsonl")
    return dets


def load_detections(path: Path) -> list:
    return [Detection.from_dict(r) for r in read_jsonl(path)]


def write_eval(dets, gts_by_frame: dict, out: Path, bins: int):
    gts = [a for fid in sorted(gts_by_frame) for a in gts_by_frame[fid]]
    res = evaluate(dets, gts)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(res, out / "metrics.json", out / "metrics.csv")
    counts, edges = iou_histogram(res.det_ious, bins)
    write_histogram_csv(out / "iou_hist.csv", counts, edges)
    return res


def write_histogram_plot(run_dir: Path, out: Path, compare=(), labels=None) -> Path:
    dirs = [run_dir] + list(compare)
    series = []
    for k, d in enumerate(dirs):
        p = d / "iou_hist.csv"
        if not p.is_file():
            raise InputError(f"{p} not found (run `rexo eval` first)")
        counts, edges = read_histogram_csv(p)
        label = labels[k] if labels and k < len(labels) else d.name
        series.append((label, counts, edges))
    target = out / "iou_hist.svg"
    target.write_text(histogram_svg(series, title="IoU of each detection with its best ground truth"))
    return target


def write_heatmap_renders(cfg: RunConfig, data: Path, dets, out: Path, n: int) -> list:
    """PNG and SVG renders of both views for the first ``n`` frames, boxes overlaid."""
    if n <= 0:
        return []
    gts = load_annotations(data / "annotations.jsonl")
    by_frame = defaultdict(list)
    for d in dets:
        by_frame[d.frame_id].append(d)
    rdir = out / "render"
    rdir.mkdir(parents=True, exist_ok=True)
    written = []
    for fid in frame_ids(data)[:n]:
        frames = load_frames(data, fid, cfg)
        g_views = project_to_views_batch(boxes3d(gts.get(fid, [])))
        p_views = project_to_views_batch(boxes3d(by_frame.get(fid, [])))
        for k, v in enumerate(VIEWS):
            view = frames.view(v)[0]
            stem = rdir / f"frame_{fid:05d}_{v}"
            stem.with_suffix(".png").write_bytes(png_bytes(heatmap_image(view)))
            svg = heatmap_svg(view, frames.grids[v], g_views[k], p_views[k], title=f"frame {fid} {v}")
            stem.with_suffix(".svg").write_text(svg)
            written += [stem.with_suffix(".png"), stem.with_suffix(".svg")]
    return written


def steps_sweep(cfg: RunConfig, data: Path, out: Path, workers: int, known: dict) -> dict:
    """AP for each step count in ``cfg.steps_sweep``; written as ``Steps,AP`` with AP in percent."""
    gts = load_annotations(data / "annotations.jsonl")
    flat = [a for fid in sorted(gts) for a in gts[fid]]
    aps = {}
    for S in cfg.steps_sweep:
        if S in known:
            aps[S] = known[S]
            continue
        ic = cfg.inference.__class__(**{**cfg.inference.to_dict(), "steps": S})
        dets, _, _ = infer(cfg.with_overrides(inference=ic), data, workers, with_loss=False)
        aps[S] = evaluate(dets, flat).AP
    with open(out / "steps_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Steps", "AP"])
        for S in cfg.steps_sweep:
            w.writerow([S, "" if aps[S] is None else f"{100.0 * aps[S]:.2f}"])
    return aps


# --------------------------------------------------------------------------
# subcommands


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(seed=args.seed)
        validate(cfg)
    return cfg


def _out(args, cfg: RunConfig) -> Path:
    return Path(args.out) if getattr(args, "out", None) else Path(cfg.output_dir)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    simulate(cfg, out, num_workers())
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = _config(args)
    data = Path(args.data)
    out = Path(args.out) if args.out else data
    write_inference(cfg, data, out, num_workers())
    return EXIT_OK


def cmd_eval(args) -> int:
    run = Path(args.run)
    gts = load_annotations(Path(args.annotations) if args.annotations else run / "annotations.jsonl")
    dets = load_detections(Path(args.detections) if args.detections else run / "detections.jsonl")
    res = write_eval(dets, gts, Path(args.out) if args.out else run, args.bins)
    print(f"AP {res.AP} AP50 {res.AP50} AP75 {res.AP75} AR1 {res.AR1} AR10 {res.AR10}")
    return EXIT_OK


def cmd_plot(args) -> int:
    run = Path(args.run)
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    write_histogram_plot(run, out, [Path(c) for c in args.compare], args.labels)
    if args.heatmaps > 0:
        cfg = _config(args)
        data = Path(args.data) if args.data else run
        write_heatmap_renders(cfg, data, load_detections(run / "detections.jsonl"), out, args.heatmaps)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    workers = num_workers()
    simulate(cfg, out, workers)
    dets = write_inference(cfg, out, out, workers)
    res = write_eval(dets, load_annotations(out / "annotations.jsonl"), out, cfg.histogram_bins)
    write_histogram_plot(out, out, labels=[f"{cfg.detector.kind}, S={cfg.inference.steps}"])
    write_heatmap_renders(cfg, out, dets, out, cfg.save_heatmaps)
    if cfg.steps_sweep:
        steps_sweep(cfg, out, out, workers, {cfg.inference.steps: res.AP})
    print(f"AP {res.AP} AP50 {res.AP50} AP75 {res.AP75} AR1 {res.AR1} AR10 {res.AR10}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rexo", description="Box-diffusion radar person detection on synthetic scenes")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=f"rexo {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate scenes, annotations and radar heatmaps")
    s.add_argument("--config", help="JSON run config (defaults when omitted)")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.add_argument("--out", help="output directory (default: config output_dir)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("infer", help="run diffusion inference on simulated frames")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--data", required=True, help="directory written by simulate")
    s.add_argument("--out", help="output directory (default: the data directory)")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="AP/AR metrics and the IoU histogram")
    s.add_argument("run", help="directory holding detections.jsonl and annotations.jsonl")
    s.add_argument("--detections")
    s.add_argument("--annotations")
    s.add_argument("--bins", type=int, default=20)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("plot", help="IoU histogram SVG and heatmap renders")
    s.add_argument("run", help="directory holding iou_hist.csv")
    s.add_argument("--compare", nargs="*", default=[], help="further evaluated directories to overlay")
    s.add_argument("--labels", nargs="*", help="legend labels, one per directory")
    s.add_argument("--heatmaps", type=int, default=0, help="render this many frames with box overlays")
    s.add_argument("--data", help="simulation directory for heatmap renders (default: run)")
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("run", help="simulate, infer, eval and plot in one go, plus a steps sweep")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for line in exc.format_lines():
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failure: report and exit 1
        log.debug("traceback", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
