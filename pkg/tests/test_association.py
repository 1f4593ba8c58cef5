import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_roi_align
from rexo import association
from rexo.association import (
    FeatureLevel,
    assign_level,
    build_pyramid,
    clamp_box,
    crop_and_concat,
    roi_align,
    split_pair,
)
from rexo.geometry import SceneBounds
from rexo.radarsim import RadarFrameSet, view_grids

B = SceneBounds()
GRIDS = view_grids(B)


def _frames(hor, ver=None):
    ver = hor if ver is None else ver
    return RadarFrameSet(hor, ver, GRIDS)


def test_constant_input_constant_levels():
    hor, ver = build_pyramid(_frames(np.full((2, 256, 128), 3.5)), L=4)
    for pyr in (hor, ver):
        for lv in pyr.levels:
            assert np.allclose(lv.data, 3.5, atol=1e-12)


def test_level_shapes_follow_strides():
    hor, _ = build_pyramid(_frames(np.zeros((4, 256, 128))), L=4)
    assert [lv.stride for lv in hor.levels] == [1, 2, 4, 8]
    assert [lv.data.shape for lv in hor.levels] == [(4, 256 // s, 128 // s) for s in (1, 2, 4, 8)]
    assert hor.channels == 4 and hor.L == 4


def test_level_extent_matches_grid():
    hor, _ = build_pyramid(_frames(np.zeros((1, 256, 128))), L=4)
    for lv in hor.levels:
        assert np.allclose(lv.extent, (B.x[0], B.x[1], B.z[0], B.z[1]))


def test_deep_level_argmax_near_level0_argmax():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = np.zeros((1, 256, 128))
        a, b = rng.integers(8, 248), rng.integers(8, 120)
        m[0, a, b] = 1.0
        hor, _ = build_pyramid(_frames(m), L=4)
        l0 = hor.levels[0].data[0]
        a0, b0 = np.unravel_index(np.argmax(l0), l0.shape)
        for lv in hor.levels[1:]:
            s = lv.stride
            pooled = l0.reshape(256 // s, s, 128 // s, s).mean(axis=(1, 3))
            assert np.allclose(lv.data[0], pooled, atol=1e-12)
            al, bl = np.unravel_index(np.argmax(lv.data[0]), lv.data[0].shape)
            assert abs(al * s + (s - 1) / 2 - a0) <= s and abs(bl * s + (s - 1) / 2 - b0) <= s


def test_assign_level_examples():
    hor, _ = build_pyramid(_frames(np.zeros((1, 256, 128))), L=4)
    ra, rb = hor.res
    canonical = [0, 0, 32 * ra, 32 * rb]
    assert assign_level(canonical, hor) == hor.base_level
    big = [0, 0, 4 * 32 * ra, 4 * 32 * rb]
    assert assign_level(big, hor) == min(hor.base_level + 2, hor.L - 1)
    assert assign_level([0, 0, 2 * 32 * ra, 2 * 32 * rb], hor) == hor.base_level + 1
    assert assign_level([0, 0, 1e-4, 1e-4], hor) == 0
    assert assign_level([0, 0, 0, 0], hor) == 0


def test_pyramid_needs_grids():
    with pytest.raises(ValueError):
        build_pyramid(RadarFrameSet(np.zeros((1, 8, 8)), np.zeros((1, 8, 8))), L=2)


def _level(rng, C=2, A=40, Bn=24, stride=1):
    return FeatureLevel(rng.standard_normal((C, A, Bn)), stride, (-1.0, 0.5), (0.05, 0.1))


def test_roi_align_constant_map():
    lv = FeatureLevel(np.full((3, 20, 10), 2.0), 1, (0.0, 0.0), (0.1, 0.1))
    crop, empty = roi_align(lv, [1.0, 0.5, 0.6, 0.4], 7)
    assert not empty and crop.shape == (3, 7, 7) and np.allclose(crop, 2.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 9), st.integers(1, 3))
def test_roi_align_matches_naive_oracle(seed, r, stride):
    rng = np.random.default_rng(seed)
    lv = _level(rng, stride=stride)
    lo_a, hi_a, lo_b, hi_b = lv.extent
    box = [rng.uniform(lo_a - 0.5, hi_a + 0.5), rng.uniform(lo_b - 0.5, hi_b + 0.5),
           rng.uniform(0.01, 3.0), rng.uniform(0.01, 3.0)]
    crop, empty = roi_align(lv, box, r)
    ref, ref_empty = naive_roi_align(lv.data, lv.origin, lv.cell, box, r)
    assert empty == ref_empty
    assert np.max(np.abs(crop - ref)) <= 1e-9


def test_roi_align_box_outside_map_is_empty():
    lv = _level(np.random.default_rng(1))
    crop, empty = roi_align(lv, [100.0, 100.0, 1.0, 1.0], 7)
    assert empty and not np.any(crop)


def test_clamp_box_inside_extent():
    lv = _level(np.random.default_rng(2))
    lo_a, hi_a, lo_b, hi_b = clamp_box([0.0, 0.0, 100.0, 100.0], lv)
    assert (lo_a, hi_a, lo_b, hi_b) == lv.extent


def test_crop_concat_and_split():
    rng = np.random.default_rng(3)
    h, v = rng.standard_normal((2, 4, 7, 7))
    pair = crop_and_concat(h, v)
    assert pair.shape == (4, 7, 14)
    assert np.array_equal(pair[..., :7], h)
    hh, vv = split_pair(pair)
    assert np.array_equal(hh, h) and np.array_equal(vv, v)
    with pytest.raises(ValueError):
        crop_and_concat(h, v[:, :5])


def test_default_crop_size_is_seven():
    import inspect

    assert inspect.signature(roi_align).parameters["r"].default == 7
    assert association.roi_align is roi_align
