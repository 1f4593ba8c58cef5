"""Cross-view feature association: a fixed feature pyramid, RoI level choice and RoIAlign.

The pyramid is a deterministic stand-in for a shared backbone: the M stacked
frames are the channels, level 0 is a binomial smoothing of the heatmap and
each deeper level halves the resolution by 2x2 average pooling.  The same
procedure runs on both views.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve

from .geometry import ViewBox2D
from .radarsim import RadarFrameSet, ViewGrid

SMOOTHING_KERNEL = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0


@dataclass(frozen=True)
class FeatureLevel:
    """One pyramid level; ``data`` is (C, A, B) with cells of ``cell = (res_a, res_b) * stride`` meters."""

    data: np.ndarray
    stride: int
    origin: tuple
    res: tuple

    @property
    def cell(self) -> tuple:
        return (self.res[0] * self.stride, self.res[1] * self.stride)

    @property
    def extent(self) -> tuple:
        """Physical ``(lo_a, hi_a, lo_b, hi_b)`` covered by the level."""
        ca, cb = self.cell
        return (
            self.origin[0],
            self.origin[0] + self.data.shape[1] * ca,
            self.origin[1],
            self.origin[1] + self.data.shape[2] * cb,
        )


@dataclass(frozen=True)
class FeaturePyramid:
    levels: tuple
    view: str
    canonical: float = 32.0
    base_level: int = 2

    def __post_init__(self):
        if len(self.levels) < 1:
            raise ValueError("pyramid needs at least one level")
        strides = [lv.stride for lv in self.levels]
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise ValueError("strides must be strictly increasing")

    @property
    def L(self) -> int:
        return len(self.levels)

    @property
    def res(self) -> tuple:
        return self.levels[0].res

    @property
    def channels(self) -> int:
        return self.levels[0].data.shape[0]


def _pool2(x: np.ndarray) -> np.ndarray:
    C, A, B = x.shape
    A2, B2 = A // 2, B // 2
    x = x[:, : 2 * A2, : 2 * B2]
    return x.reshape(C, A2, 2, B2, 2).mean(axis=(2, 4))


def _pyramid_for(stack: np.ndarray, grid: ViewGrid, view: str, L: int) -> FeaturePyramid:
    k = SMOOTHING_KERNEL[None]
    lv0 = convolve(stack, k, mode="nearest")
    levels = [FeatureLevel(lv0, 1, (grid.a[0], grid.b[0]), grid.res)]
    for l in range(1, L):
        prev = levels[-1].data
        if min(prev.shape[1:]) < 2:
            break
        levels.append(FeatureLevel(_pool2(prev), 2**l, levels[0].origin, grid.res))
    return FeaturePyramid(tuple(levels), view)


def build_pyramid(frames: RadarFrameSet, L: int = 4) -> tuple[FeaturePyramid, FeaturePyramid]:
    """Horizontal and vertical pyramids with strides 1, 2, 4, ... (C = M channels)."""
    if L < 1:
        raise ValueError("L must be >= 1")
    if not frames.grids:
        raise ValueError("frames carry no view grid; cannot place boxes on the heatmaps")
    return (
        _pyramid_for(frames.hor, frames.grids["horizontal"], "horizontal", L),
        _pyramid_for(frames.ver, frames.grids["vertical"], "vertical", L),
    )


def _box_arr(box) -> np.ndarray:
    return box.as_array() if isinstance(box, ViewBox2D) else np.asarray(box, dtype=float)


def assign_level(box, pyramid: FeaturePyramid) -> int:
    """``clamp(floor(base + log2(sqrt(area_cells) / canonical)), 0, L - 1)``, area in level-0 cells."""
    _, _, sa, sb = _box_arr(box)
    ra, rb = pyramid.res
    size = math.sqrt(max(sa, 0.0) / ra * max(sb, 0.0) / rb)
    if size <= 0:
        return 0
    lvl = math.floor(pyramid.base_level + math.log2(size / pyramid.canonical))
    return int(min(max(lvl, 0), pyramid.L - 1))


def clamp_box(box, level: FeatureLevel) -> tuple[float, float, float, float]:
    """Clip a view box to the level extent; returns ``(lo_a, hi_a, lo_b, hi_b)``."""
    ca, cb, sa, sb = _box_arr(box)
    xa0, xa1, xb0, xb1 = level.extent
    lo_a = min(max(ca - sa / 2.0, xa0), xa1)
    hi_a = min(max(ca + sa / 2.0, xa0), xa1)
    lo_b = min(max(cb - sb / 2.0, xb0), xb1)
    hi_b = min(max(cb + sb / 2.0, xb0), xb1)
    return lo_a, hi_a, lo_b, hi_b


def roi_align(level: FeatureLevel, box, r: int = 7) -> tuple[np.ndarray, bool]:
    """Bilinear RoIAlign with one center-aligned sample per output cell.

    Returns the ``(C, r, r)`` crop and an ``empty`` flag that is set (with an
    all-zero crop) when the box has no area left after clipping to the level.
    """
    data = level.data
    C, A, B = data.shape
    lo_a, hi_a, lo_b, hi_b = clamp_box(box, level)
    if hi_a <= lo_a or hi_b <= lo_b:
        return np.zeros((C, r, r)), True
    frac = (np.arange(r) + 0.5) / r
    cell_a, cell_b = level.cell
    ua = (lo_a + frac * (hi_a - lo_a) - level.origin[0]) / cell_a - 0.5
    ub = (lo_b + frac * (hi_b - lo_b) - level.origin[1]) / cell_b - 0.5
    ua = np.clip(ua, 0.0, A - 1)
    ub = np.clip(ub, 0.0, B - 1)
    ia0 = np.floor(ua).astype(int)
    ib0 = np.floor(ub).astype(int)
    ia1 = np.minimum(ia0 + 1, A - 1)
    ib1 = np.minimum(ib0 + 1, B - 1)
    fa = (ua - ia0)[:, None]
    fb = (ub - ib0)[None, :]
    v00 = data[:, ia0[:, None], ib0[None, :]]
    v01 = data[:, ia0[:, None], ib1[None, :]]
    v10 = data[:, ia1[:, None], ib0[None, :]]
    v11 = data[:, ia1[:, None], ib1[None, :]]
    crop = (1 - fa) * (1 - fb) * v00 + (1 - fa) * fb * v01 + fa * (1 - fb) * v10 + fa * fb * v11
    return crop, False


def crop_and_concat(hor_crop: np.ndarray, ver_crop: np.ndarray) -> np.ndarray:
    if hor_crop.shape != ver_crop.shape or hor_crop.ndim != 3 or hor_crop.shape[1] != hor_crop.shape[2]:
        raise ValueError(f"crop shapes differ or are not (C, r, r): {hor_crop.shape} vs {ver_crop.shape}")
    return np.concatenate([hor_crop, ver_crop], axis=-1)


def split_pair(pair: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = pair.shape[-1] // 2
    return pair[..., :r], pair[..., r:]
