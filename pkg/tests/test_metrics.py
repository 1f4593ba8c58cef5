import csv
import json

import numpy as np
import pytest

from oracles import brute_ap, brute_ar, naive_histogram
from rexo.geometry import Box3D, ImageBox2D
from rexo.metrics import (
    COCO_THRESHOLDS,
    INTERPOLATION,
    average_precision,
    average_recall,
    detection_ious,
    evaluate,
    interpolated_ap,
    iou,
    iou_histogram,
    read_histogram_csv,
    write_histogram_csv,
    write_metrics,
)
from rexo.structures import Annotation, Detection

DUMMY = Box3D(0, 0.85, 3, 0.5, 1.7, 0.3)


def gt(box, frame=0):
    return Annotation(DUMMY, ImageBox2D(*box), 0, frame)


def det(box, score, frame=0):
    return Detection(DUMMY, ImageBox2D(*box), (score, 1.0 - score), frame)


def test_iou_cases():
    assert iou([5, 5, 2, 2], [5, 5, 2, 2]) == 1.0
    assert iou([0, 0, 1, 1], [5, 5, 1, 1]) == 0.0
    assert iou([1, 1, 2, 2], [2, 2, 2, 2]) == pytest.approx(1 / 7, abs=1e-15)


def test_thresholds_and_interpolation_named():
    assert COCO_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
    assert INTERPOLATION == "continuous"


def test_ap_identical_and_disjoint():
    g = [gt((10, 10, 4, 4))]
    r = average_precision([det((10, 10, 4, 4), 0.9)], g)
    assert all(v == 1.0 for v in r["per_threshold"].values())
    assert average_precision([det((50, 50, 4, 4), 0.9)], g)["mean"] == 0.0


def test_ap_hand_computed_staircase():
    g = [gt((10, 10, 4, 4)), gt((30, 30, 4, 4))]
    d = [det((10, 10, 4, 4), 0.9), det((70, 70, 4, 4), 0.8), det((30, 30, 4, 4), 0.7)]
    # ranks: TP, FP, TP -> precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
    assert average_precision(d, g, thresholds=(0.5,))["mean"] == pytest.approx(0.5 * 1 + 0.5 * 2 / 3, abs=1e-15)


def test_ap_without_ground_truth_is_none():
    assert average_precision([det((1, 1, 1, 1), 0.5)], []) is None
    with pytest.raises(ValueError):
        interpolated_ap(np.array([True]), 0)


def test_detections_only_match_their_own_frame():
    g = [gt((10, 10, 4, 4), frame=0)]
    d = [det((10, 10, 4, 4), 0.9, frame=1)]
    assert average_precision(d, g)["mean"] == 0.0


def _random_frames(rng, n_frames=50):
    gts, dets = [], []
    for f in range(n_frames):
        for _ in range(rng.integers(0, 4)):
            gts.append((f, np.array([rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(4, 12), rng.uniform(4, 12)])))
        for _ in range(rng.integers(0, 6)):
            if gts and rng.random() < 0.6 and gts[-1][0] == f:
                base = gts[-1][1]
                box = base + rng.normal(0, 1.5, 4) * np.array([1, 1, 0.3, 0.3])
                box[2:] = np.abs(box[2:]) + 0.5
            else:
                box = np.array([rng.uniform(0, 40), rng.uniform(0, 40), rng.uniform(4, 12), rng.uniform(4, 12)])
            # coarse scores create ties that exercise the index tie-break
            dets.append((f, float(np.round(rng.random(), 1)), box))
    return gts, dets


def test_ap_ar_match_brute_force_evaluator():
    rng = np.random.default_rng(0)
    for trial in range(10):
        g_raw, d_raw = _random_frames(rng)
        if not g_raw:
            continue
        g = [gt(tuple(b), f) for f, b in g_raw]
        d = [det(tuple(b), s, f) for f, s, b in d_raw]
        ap = average_precision(d, g)
        for thr in COCO_THRESHOLDS:
            assert ap["per_threshold"][thr] == pytest.approx(brute_ap(d_raw, g_raw, thr), abs=1e-12)
        for k in (1, 10):
            assert average_recall(d, g, k) == pytest.approx(brute_ar(d_raw, g_raw, k), abs=1e-12)


def test_ar_examples():
    g = [gt((10, 10, 4, 4)), gt((30, 30, 4, 4))]
    assert average_recall([det((10, 10, 4, 4), 0.9), det((30, 30, 4, 4), 0.8)], g, 10) == 1.0
    assert average_recall([det((50, 50, 4, 4), 0.9)], g, 10) == 0.0
    # single annotation with best IoU 0.8: boxes of width 4 and 3.2 sharing a center
    one = [gt((10, 10, 4, 1))]
    d = [det((10, 10, 3.2, 1), 0.9)]
    assert iou(d[0].box2d, one[0].box2d) == pytest.approx(0.8, abs=1e-15)
    assert average_recall(d, one, 1) == pytest.approx(0.6, abs=1e-12)
    assert average_recall([], [], 1) is None
    with pytest.raises(ValueError):
        average_recall(d, one, 0)


def test_ar_respects_top_k_per_frame():
    g = [gt((10, 10, 4, 4))]
    d = [det((50, 50, 4, 4), 0.9), det((10, 10, 4, 4), 0.5)]
    assert average_recall(d, g, 1) == 0.0
    assert average_recall(d, g, 10) == 1.0


def test_histogram_cases():
    counts, edges = iou_histogram([1.0, 1.0, 1.0], bins=20)
    assert counts[-1] == 3 and counts.sum() == 3 and len(edges) == 21
    counts, _ = iou_histogram([], bins=10)
    assert counts.sum() == 0 and len(counts) == 10
    with pytest.raises(ValueError):
        iou_histogram([0.5], bins=0)


def test_histogram_matches_naive_binning():
    rng = np.random.default_rng(1)
    vals = list(rng.random(500)) + [0.0, 0.5, 0.25, 1.0, 0.95]
    for bins in (1, 7, 20):
        counts, _ = iou_histogram(vals, bins)
        assert list(counts) == naive_histogram(vals, bins)


def test_detection_ious():
    g = [gt((10, 10, 4, 4)), gt((30, 30, 4, 4))]
    d = [det((30, 30, 4, 4), 0.2), det((10, 10, 3.2, 4), 0.9), det((10, 10, 4, 4), 0.5, frame=3)]
    assert list(detection_ious(d, g)) == pytest.approx([1.0, 0.8, 0.0])


def test_evaluate_and_write(tmp_path):
    g = [gt((10, 10, 4, 4)), gt((30, 30, 4, 4))]
    d = [det((10, 10, 4, 4), 0.9), det((70, 70, 4, 4), 0.8), det((30, 30, 4, 4), 0.7)]
    res = evaluate(d, g)
    assert res.AP50 == pytest.approx(5 / 6) and res.n_gt == 2 and res.n_det == 3
    write_metrics(res, tmp_path / "m.json", tmp_path / "m.csv")
    obj = json.loads((tmp_path / "m.json").read_text())
    assert obj["AP50"] == pytest.approx(5 / 6) and obj["interpolation"] == "continuous"
    rows = list(csv.reader((tmp_path / "m.csv").open()))
    assert rows[0] == ["AP", "AP50", "AP75", "AR1", "AR10"]
    assert rows[1][1] == "83.33"
    counts, edges = iou_histogram(res.det_ious, 20)
    write_histogram_csv(tmp_path / "h.csv", counts, edges)
    c2, e2 = read_histogram_csv(tmp_path / "h.csv")
    assert list(c2) == list(counts) and np.allclose(e2, edges)
