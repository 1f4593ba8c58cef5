"""Image-plane detection metrics: IoU, interpolated AP, AR@k and IoU histograms.

Matching follows the COCO convention: per IoU threshold, detections from all
frames are visited by descending score (ties by list index) and each one takes
the unmatched ground truth of its frame with the highest IoU at or above the
threshold.  AP is the area under the interpolated precision-recall curve,
``sum_i (r_i - r_{i-1}) * max_{r' >= r_i} p(r')``, evaluated on the exact
recall steps (continuous interpolation, not the 101-point grid).
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .geometry import iou as _iou

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
INTERPOLATION = "continuous"


def iou(a, b) -> float:
    """IoU of two image boxes in center/size form; 0 when the union is empty."""
    return _iou(a, b, 2)


def _box2d(x):
    return x.box2d if hasattr(x, "box2d") else x


def _rank(dets) -> list:
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def _by_frame(gts) -> dict:
    out = defaultdict(list)
    for j, g in enumerate(gts):
        out[g.frame_id].append(j)
    return out


def match_detections(dets, gts, thr: float) -> np.ndarray:
    """Greedy COCO matching at one threshold: returns a TP flag per detection, in ranked order."""
    frames = _by_frame(gts)
    taken = set()
    tp = []
    for i in _rank(dets):
        d = dets[i]
        best, best_iou = -1, thr
        for j in frames.get(d.frame_id, ()):
            if j in taken:
                continue
            v = iou(_box2d(d), _box2d(gts[j]))
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            taken.add(best)
        tp.append(best >= 0)
    return np.array(tp, dtype=bool)


def interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    """Area under the interpolated PR curve given ranked TP flags."""
    if n_gt <= 0:
        raise ValueError("AP needs at least one ground truth")
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    prec = ctp / np.arange(1, len(tp) + 1)
    rec = ctp / n_gt
    # running max from the right gives the highest precision at recall >= r
    interp = np.maximum.accumulate(prec[::-1])[::-1]
    prev = np.concatenate([[0.0], rec[:-1]])
    return float(np.sum((rec - prev) * interp))


def average_precision(dets, gts, thresholds=COCO_THRESHOLDS) -> dict | None:
    """``{"per_threshold": {thr: AP}, "mean": mean AP}``, or ``None`` without ground truth."""
    if len(gts) == 0:
        return None
    per = {float(t): interpolated_ap(match_detections(dets, gts, t), len(gts)) for t in thresholds}
    return {"per_threshold": per, "mean": float(np.mean(list(per.values())))}


def best_ious(dets, gts, k: int | None = None) -> np.ndarray:
    """Per-annotation best IoU against the top-``k`` detections of its frame (all when k is None)."""
    per_frame = defaultdict(list)
    for i in _rank(dets):
        d = dets[i]
        if k is None or len(per_frame[d.frame_id]) < k:
            per_frame[d.frame_id].append(d)
    out = np.zeros(len(gts))
    for j, g in enumerate(gts):
        cands = per_frame.get(g.frame_id, ())
        out[j] = max((iou(_box2d(d), _box2d(g)) for d in cands), default=0.0)
    return out


def detection_ious(dets, gts) -> np.ndarray:
    """Per-detection best IoU against the ground truth of its frame, in input order.

    This is the quantity an IoU histogram breaks AP down into; a frame without
    ground truth gives 0.
    """
    frames = _by_frame(gts)
    out = np.zeros(len(dets))
    for i, d in enumerate(dets):
        out[i] = max((iou(_box2d(d), _box2d(gts[j])) for j in frames.get(d.frame_id, ())), default=0.0)
    return out


def average_recall(dets, gts, k: int) -> float | None:
    """``(2 / n) * sum_i max(IoU_i - 0.5, 0)`` with IoU_i from the top-k detections per frame."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(gts)
    if n == 0:
        return None
    ious = best_ious(dets, gts, k)
    return float(2.0 / n * np.sum(np.maximum(ious - 0.5, 0.0)))


def iou_histogram(ious, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Counts over ``bins`` uniform bins on [0, 1]; IoU = 1 falls in the last bin."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    edges = np.linspace(0.0, 1.0, bins + 1)
    v = np.clip(np.asarray(ious, dtype=float).ravel(), 0.0, 1.0)
    idx = np.minimum((v * bins).astype(int), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return counts, edges


@dataclass
class EvalResult:
    AP: float | None
    AP50: float | None
    AP75: float | None
    AR1: float | None
    AR10: float | None
    ious: list = field(default_factory=list)
    det_ious: list = field(default_factory=list)
    ap_per_threshold: dict = field(default_factory=dict)
    n_gt: int = 0
    n_det: int = 0

    def to_dict(self) -> dict:
        return {
            "AP": self.AP,
            "AP50": self.AP50,
            "AP75": self.AP75,
            "AR1": self.AR1,
            "AR10": self.AR10,
            "ap_per_threshold": {f"{k:.2f}": v for k, v in sorted(self.ap_per_threshold.items())},
            "n_gt": self.n_gt,
            "n_det": self.n_det,
            "interpolation": INTERPOLATION,
            "matching": "greedy-by-score",
            "ious": list(self.ious),
            "det_ious": list(self.det_ious),
        }


def evaluate(dets, gts, thresholds=COCO_THRESHOLDS) -> EvalResult:
    ap = average_precision(dets, gts, thresholds)
    per = ap["per_threshold"] if ap else {}
    return EvalResult(
        AP=ap["mean"] if ap else None,
        AP50=per.get(0.5),
        AP75=per.get(0.75),
        AR1=average_recall(dets, gts, 1),
        AR10=average_recall(dets, gts, 10),
        ious=[float(v) for v in best_ious(dets, gts)],
        det_ious=[float(v) for v in detection_ious(dets, gts)],
        ap_per_threshold=per,
        n_gt=len(gts),
        n_det=len(dets),
    )


CSV_FIELDS = ("AP", "AP50", "AP75", "AR1", "AR10")


def _pct(v):
    return "" if v is None else f"{100.0 * v:.2f}"


def write_metrics(result: EvalResult, json_path, csv_path, extra: dict | None = None) -> None:
    """JSON keeps fractions in [0, 1]; the CSV reports percentages like a results table."""
    obj = result.to_dict()
    if extra:
        obj.update(extra)
    with open(json_path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        w.writerow([_pct(getattr(result, k)) for k in CSV_FIELDS])


def write_histogram_csv(path, counts, edges) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            w.writerow([f"{lo:.4f}", f"{hi:.4f}", int(c)])


def read_histogram_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return np.zeros(0, dtype=int), np.zeros(1)
    counts = np.array([int(r["count"]) for r in rows])
    edges = np.array([float(rows[0]["bin_lo"])] + [float(r["bin_hi"]) for r in rows])
    return counts, edges
