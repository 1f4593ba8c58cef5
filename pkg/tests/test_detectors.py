import numpy as np
import pytest

from rexo.association import build_pyramid
from rexo.detectors import SHRINK_PRIOR, CentroidDetector, OracleDetector, projection_bias_offsets
from rexo.diffusion import timestep_embedding
from rexo.geometry import Box3D, SceneBounds, apply_offsets_3d, apply_refinement_offsets, default_calib, midplane_image_box, project_box
from rexo.pipeline import DetectorInput, current_boxes, gather_crops
from rexo.scenes import make_suite, render
from rexo.structures import PERSON, Annotation

B = SceneBounds()
CAL = default_calib()
R = 7


def _gauss(r, ca, cb, sd=1.0):
    a, b = np.meshgrid(np.arange(r), np.arange(r), indexing="ij")
    return np.exp(-((a - ca) ** 2 + (b - cb) ** 2) / (2 * sd**2))


def _pair(hor, ver, C=2):
    return np.repeat(np.concatenate([hor, ver], axis=-1)[None], C, axis=0)


# view extents: horizontal (x, z), vertical (y, z); 7 cells of 0.2 m in every direction
VIEWS = np.array([[-0.7, 0.7, 2.3, 3.7], [0.15, 1.55, 2.3, 3.7]])


def _input(boxes, crops=None, empty=None):
    boxes = np.asarray(boxes, dtype=float)
    n = len(boxes)
    return DetectorInput(
        crops=np.zeros((n, 2, R, 2 * R)) if crops is None else crops,
        t=500,
        embedding=timestep_embedding(500, 32),
        boxes=boxes,
        view_boxes=np.repeat(VIEWS[None], n, axis=0),
        empty=np.zeros((n, 2), bool) if empty is None else empty,
        calib=CAL,
        bounds=B,
    )


# ---------------------------------------------------------------- oracle


def _ann(cx, cz):
    b = Box3D(cx, 0.85, cz, 0.5, 1.7, 0.3)
    return Annotation(b, midplane_image_box(b, CAL), PERSON, 0)


def test_oracle_decodes_exactly_onto_targets():
    gts = [_ann(-1.0, 2.5), _ann(1.2, 4.0)]
    boxes = current_boxes(np.random.default_rng(0).standard_normal((6, 6)), B)
    out = OracleDetector(gts)(_input(boxes))
    decoded = apply_offsets_3d(boxes, out.offsets3d)
    matched = [i for i in range(6) if out.scores[i, PERSON] == 1.0]
    assert len(matched) == 2
    targets = {tuple(np.round(g.box3d.as_array(), 12)) for g in gts}
    assert {tuple(np.round(decoded[i], 12)) for i in matched} == targets
    for i in set(range(6)) - set(matched):
        assert np.array_equal(out.scores[i], [0.0, 1.0])


def test_oracle_without_ground_truth_is_all_background():
    out = OracleDetector([])(_input(current_boxes(np.zeros((3, 6)), B)))
    assert np.all(out.scores[:, 1] == 1.0) and not np.any(out.offsets3d)


def test_oracle_noise_is_bounded():
    gts = [_ann(0.0, 3.0)]
    boxes = current_boxes(np.random.default_rng(1).standard_normal((4, 6)), B)
    clean = OracleDetector(gts)(_input(boxes))
    noisy = OracleDetector(gts, eta0=0.1, seed=3)(_input(boxes))
    diff = np.abs(noisy.offsets3d - clean.offsets3d)
    assert diff.max() <= 0.1 and diff.max() > 0
    assert np.isclose(noisy.scores[:, PERSON].max(), 0.9)
    with pytest.raises(ValueError):
        OracleDetector(gts, eta0=0.5)


def test_projection_bias_takes_corner_box_to_silhouette():
    box = Box3D(0.3, 0.85, 3.0, 0.5, 1.7, 0.3)
    o = projection_bias_offsets(box, CAL)
    got = apply_refinement_offsets(project_box(box, CAL), o)
    assert np.allclose(got.as_array(), midplane_image_box(box, CAL).as_array(), atol=1e-9)
    behind = Box3D(0.0, 0.85, -3.0, 0.5, 1.7, 0.3)
    assert np.array_equal(projection_bias_offsets(behind, CAL), SHRINK_PRIOR)


# ---------------------------------------------------------------- centroid


def test_centered_blob_gives_small_center_offsets():
    pair = _pair(_gauss(R, 3, 3), _gauss(R, 3, 3))
    box = np.array([[0.0, 0.85, 3.0, 0.5, 1.7, 0.3]])
    out = CentroidDetector()(_input(box, crops=pair[None]))
    assert np.all(np.abs(out.offsets3d[0, :3]) < 0.05)
    assert out.scores[0, PERSON] > 0.9


def test_zero_crop_is_background():
    box = np.array([[0.0, 0.85, 3.0, 0.5, 1.7, 0.3]])
    out = CentroidDetector()(_input(box))
    assert np.array_equal(out.scores[0], [0.0, 1.0]) and not np.any(out.offsets3d)


def test_empty_view_is_background():
    box = np.array([[0.0, 0.85, 3.0, 0.5, 1.7, 0.3]])
    pair = _pair(_gauss(R, 3, 3), _gauss(R, 3, 3))
    out = CentroidDetector()(_input(box, crops=pair[None], empty=np.array([[False, True]])))
    assert out.scores[0, PERSON] == 0.0


def test_lateral_offset_follows_the_blob():
    box = np.array([[0.0, 0.85, 3.0, 0.5, 1.7, 0.3]])
    shifts = []
    for ca in (3.0, 3.5, 4.0, 4.5):
        pair = _pair(_gauss(R, ca, 3), _gauss(R, 3, 3))
        shifts.append(CentroidDetector()(_input(box, crops=pair[None])).offsets3d[0, 0])
    assert shifts[1] > 0 and np.all(np.diff(shifts) > 0)


def test_depth_disagreement_lowers_the_score():
    box = np.array([[0.0, 0.85, 3.0, 0.5, 1.7, 0.3]])
    same = CentroidDetector()(_input(box, crops=_pair(_gauss(R, 3, 3), _gauss(R, 3, 3))[None]))
    apart = CentroidDetector()(_input(box, crops=_pair(_gauss(R, 3, 1, 0.7), _gauss(R, 3, 5.5, 0.7))[None]))
    assert apart.scores[0, PERSON] < same.scores[0, PERSON]


def test_centroid_detects_people_on_rendered_frames():
    det = CentroidDetector()
    hits = 0
    scenes = make_suite(5, seed=11)
    for sc in scenes:
        pyr = build_pyramid(render(sc, "blob", M=1), 4)
        boxes = np.array([b.as_array() for b in sc.persons])
        # start from the true boxes, slightly shifted
        start = boxes + np.array([0.15, 0, -0.1, 0, 0, 0])
        crops, ext, empty = gather_crops(start, pyr)
        inp = DetectorInput(crops, 100, timestep_embedding(100, 32), start, ext, empty, CAL, B)
        out = det(inp)
        est = apply_offsets_3d(start, out.offsets3d)
        for i in range(len(boxes)):
            if out.scores[i, PERSON] > 0.5 and np.abs(est[i, [0, 2]] - boxes[i, [0, 2]]).max() < 0.12:
                hits += 1
    total = sum(len(sc.persons) for sc in scenes)
    assert hits >= 0.8 * total


def test_centroid_config_round_trip():
    d = CentroidDetector(bias=0.2).to_dict()
    assert d["bias"] == 0.2 and isinstance(d["prior_size"], list)
