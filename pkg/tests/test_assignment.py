import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_assignment
from rexo.assignment import (
    LossWeights,
    assignment_cost,
    box_cost_ga,
    box_terms,
    classification_loss,
    cost_matrix,
    hungarian,
    match_and_loss,
)
from rexo.geometry import Box3D, SceneBounds, default_calib, midplane_image_box
from rexo.structures import BACKGROUND, PERSON, Annotation, Detection

CAL = default_calib()


def _ann(cx, cz, w=0.5, h=1.7, d=0.3, frame=0):
    b = Box3D(cx, h / 2, cz, w, h, d)
    return Annotation(b, midplane_image_box(b, CAL), PERSON, frame)


def _det(a: Annotation, p=1.0, shift=0.0):
    b = Box3D.from_array(a.box3d.as_array() + np.array([shift, 0, 0, 0, 0, 0]))
    return Detection(b, midplane_image_box(b, CAL), (p, 1.0 - p), a.frame_id)


def test_default_weights():
    w = LossWeights()
    assert (w.giou, w.l1, w.w3d, w.w2d) == (2.0, 5.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        LossWeights(l1=-1)


# ---------------------------------------------------------------- Hungarian


def test_hungarian_two_by_two():
    C = [[1, 2], [3, 1]]
    m = hungarian(C)
    assert list(m) == [0, 1] and assignment_cost(C, m) == 2


def test_hungarian_diagonal_dominant():
    C = np.ones((6, 6)) * 10 - 9 * np.eye(6)
    assert list(hungarian(C)) == list(range(6))


def test_hungarian_random_vs_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(150):
        n, m = rng.integers(1, 7, size=2)
        C = rng.random((n, m)) if rng.random() < 0.5 else rng.integers(0, 4, (n, m)).astype(float)
        cost, ref = brute_assignment(C)
        got = hungarian(C)
        assert list(got) == ref
        assert math.isclose(assignment_cost(C, got), cost, abs_tol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_hungarian_scale_invariant(seed, k):
    C = np.random.default_rng(seed).random((5, 4))
    assert list(hungarian(C)) == list(hungarian(k * C))


def test_hungarian_edge_cases():
    assert list(hungarian(np.zeros((3, 0)))) == [-1, -1, -1]
    assert list(hungarian(np.array([[5.0], [1.0], [3.0]]))) == [-1, 0, -1]
    with pytest.raises(ValueError):
        hungarian([[np.nan]])
    with pytest.raises(ValueError):
        hungarian([1, 2])


# ---------------------------------------------------------------- costs and losses


def test_box_cost_zero_for_identical():
    a = _ann(0.5, 3.0)
    assert box_cost_ga(_det(a), a) == pytest.approx(0.0, abs=1e-12)


def test_box_cost_without_image_term_is_pure_3d():
    a = _ann(0.5, 3.0)
    d = _det(_ann(0.7, 3.4, w=0.6))
    g3, l3, g2, l2 = box_terms(d, a, SceneBounds(), (320, 240))
    assert g2 > 0 and l2 > 0
    assert box_cost_ga(d, a, LossWeights(w2d=0.0)) == pytest.approx(2.0 * g3 + 5.0 * l3, rel=1e-12)
    assert box_cost_ga(d, a) == pytest.approx(2.0 * (g3 + g2) + 5.0 * (l3 + l2), rel=1e-12)


def test_classification_loss_examples():
    assert classification_loss([[1.0, 0.0]], [0], [PERSON]) == 0.0
    assert classification_loss([[0.5, 0.5]], [0], [PERSON]) == pytest.approx(math.log(2), abs=1e-15)
    assert classification_loss([[0.3, 0.7]] * 4, [-1] * 4, [], LossWeights(no_object=0.0)) == 0.0
    # padding targets background with the down-weight
    assert classification_loss([[0.5, 0.5]], [-1], []) == pytest.approx(0.1 * math.log(2))


def test_classification_loss_clamps_zero_probability():
    v = classification_loss([[0.0, 1.0]], [0], [PERSON])
    assert math.isfinite(v) and v == pytest.approx(-math.log(1e-12))


def test_cost_matrix_uses_negative_probability():
    a = _ann(0.0, 3.0)
    d = _det(a, p=0.8)
    assert cost_matrix([d], [a])[0, 0] == pytest.approx(-0.8, abs=1e-12)


def test_perfect_predictions_zero_loss():
    gts = [_ann(-1.0, 2.5), _ann(1.0, 4.0)]
    preds = [_det(gts[1]), _det(gts[0]), Detection(gts[0].box3d, gts[0].box2d, (0.0, 1.0))]
    match, lb = match_and_loss(preds, gts)
    assert list(match) == [1, 0, -1]
    assert lb.giou3d == pytest.approx(0, abs=1e-12) and lb.l1_3d == pytest.approx(0, abs=1e-12)
    assert lb.giou2d == pytest.approx(0, abs=1e-12) and lb.l1_2d == pytest.approx(0, abs=1e-12)
    assert lb.cls == 0.0 and lb.total == pytest.approx(0, abs=1e-11)


def test_better_overlap_wins_the_match():
    gt = _ann(0.0, 3.0)
    far, near = _det(gt, shift=0.3), _det(gt, shift=0.05)
    match, _ = match_and_loss([far, near], [gt])
    assert list(match) == [-1, 0]
    assert box_cost_ga(near, gt) < box_cost_ga(far, gt)


def test_match_is_permutation_equivariant():
    rng = np.random.default_rng(5)
    gts = [_ann(rng.uniform(-2, 2), rng.uniform(2, 5)) for _ in range(3)]
    preds = [_det(_ann(rng.uniform(-2, 2), rng.uniform(2, 5)), p=float(rng.uniform(0.1, 0.9))) for _ in range(6)]
    m1, l1 = match_and_loss(preds, gts)
    perm = rng.permutation(6)
    m2, l2 = match_and_loss([preds[i] for i in perm], gts)
    assert {(i, int(m1[i])) for i in range(6)} == {(int(perm[k]), int(m2[k])) for k in range(6)}
    assert l1.total == pytest.approx(l2.total, rel=1e-12)


def test_fewer_predictions_than_gt_rejected():
    gts = [_ann(0, 3), _ann(1, 4)]
    with pytest.raises(ValueError):
        match_and_loss([_det(gts[0])], gts)


def test_no_ground_truth_all_background_targets():
    preds = [Detection(Box3D(0, 0.85, 3, 0.5, 1.7, 0.3), midplane_image_box(Box3D(0, 0.85, 3, 0.5, 1.7, 0.3), CAL),
                       (0.5, 0.5))]
    match, lb = match_and_loss(preds, [])
    assert list(match) == [-1] and lb.cls == pytest.approx(0.1 * math.log(2))
    assert BACKGROUND == 1
