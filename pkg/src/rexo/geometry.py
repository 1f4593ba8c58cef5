"""Box representations, coordinate transforms, projections and overlap measures.

Radar frame convention: x is horizontal (lateral), y is vertical height with the
floor at y = 0, z is depth away from the radar.  A 3D box is stored as the
6-vector ``(cx, cy, cz, w, h, d)``; image boxes as ``(cbar_x, cbar_y, wbar, hbar)``.

Most functions accept either the dataclasses below or plain arrays whose last
axis holds the box parameters, so the sampler can work on ``(N, 6)`` batches.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

#: Upper clip for exponential size offsets, ln(10^5 / 16).
SIZE_OFFSET_CLIP = math.log(1e5 / 16.0)

#: Minimum physical extent (meters) after denormalization.
MIN_SIZE = 1e-3

# Sign patterns for the eight corners, lexicographic over (w, h, d).
CORNER_SIGNS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))


class BehindCameraError(ValueError):
    """A box corner has non-positive depth in the camera frame."""


@dataclass(frozen=True)
class Box3D:
    cx: float
    cy: float
    cz: float
    w: float
    h: float
    d: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite box parameters: {vals}")
        if min(self.w, self.h, self.d) <= 0:
            raise ValueError(f"box extents must be positive, got w={self.w} h={self.h} d={self.d}")

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.w, self.h, self.d], dtype=float)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Box3D":
        a = [float(v) for v in a]
        if len(a) != 6:
            raise ValueError(f"expected 6 box parameters, got {len(a)}")
        return cls(*a)

    def to_dict(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "cz": self.cz, "w": self.w, "h": self.h, "d": self.d}

    @classmethod
    def from_dict(cls, obj: dict) -> "Box3D":
        return cls(*(float(obj[k]) for k in ("cx", "cy", "cz", "w", "h", "d")))


@dataclass(frozen=True)
class ViewBox2D:
    """A 3D box seen in one radar view: axis ``a`` is lateral/height, axis ``b`` is depth."""

    center_a: float
    center_b: float
    size_a: float
    size_b: float
    view: str

    def __post_init__(self):
        if self.view not in ("horizontal", "vertical"):
            raise ValueError(f"unknown view {self.view!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.center_a, self.center_b, self.size_a, self.size_b], dtype=float)


@dataclass(frozen=True)
class ImageBox2D:
    cbar_x: float
    cbar_y: float
    wbar: float
    hbar: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("non-finite image box")
        if self.wbar < 0 or self.hbar < 0:
            raise ValueError(f"negative image box size ({self.wbar}, {self.hbar})")

    def as_array(self) -> np.ndarray:
        return np.array([self.cbar_x, self.cbar_y, self.wbar, self.hbar], dtype=float)

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "ImageBox2D":
        return cls(*(float(v) for v in a))

    def to_dict(self) -> dict:
        return {"cbar_x": self.cbar_x, "cbar_y": self.cbar_y, "wbar": self.wbar, "hbar": self.hbar}

    @classmethod
    def from_dict(cls, obj: dict) -> "ImageBox2D":
        return cls(*(float(obj[k]) for k in ("cbar_x", "cbar_y", "wbar", "hbar")))


@dataclass(frozen=True)
class CameraCalib:
    R: np.ndarray
    v: np.ndarray
    fx: float
    fy: float
    px: float
    py: float
    image_w: int
    image_h: int

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        v = np.asarray(self.v, dtype=float).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "v", v)
        if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-9 or np.linalg.det(R) <= 0:
            raise ValueError("R must be a proper rotation matrix")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.image_w <= 0 or self.image_h <= 0:
            raise ValueError("image size must be positive")

    def to_dict(self) -> dict:
        return {
            "R": [float(x) for x in self.R.ravel()],
            "v": [float(x) for x in self.v],
            "fx": float(self.fx),
            "fy": float(self.fy),
            "px": float(self.px),
            "py": float(self.py),
            "image_w": int(self.image_w),
            "image_h": int(self.image_h),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CameraCalib":
        if len(obj["R"]) != 9 or len(obj["v"]) != 3:
            raise ValueError("calibration needs 9 rotation entries and 3 translation entries")
        return cls(
            R=np.array(obj["R"], dtype=float).reshape(3, 3),
            v=np.array(obj["v"], dtype=float),
            fx=float(obj["fx"]),
            fy=float(obj["fy"]),
            px=float(obj["px"]),
            py=float(obj["py"]),
            image_w=int(obj["image_w"]),
            image_h=int(obj["image_h"]),
        )


def default_calib() -> CameraCalib:
    """Camera 1.2 m above and 1 m behind the radar, pitched 5 degrees down.

    The camera frame has y pointing down, so the base rotation flips x and y.
    """
    pitch = math.radians(5.0)
    flip = np.diag([-1.0, -1.0, 1.0])
    rx = np.array(
        [
            [1.0, 0.0, 0.0],
            [0.0, math.cos(pitch), -math.sin(pitch)],
            [0.0, math.sin(pitch), math.cos(pitch)],
        ]
    )
    R = rx @ flip
    cam_pos = np.array([0.0, 1.2, -1.0])
    return CameraCalib(R=R, v=-R @ cam_pos, fx=300.0, fy=300.0, px=160.0, py=120.0, image_w=320, image_h=240)


@dataclass(frozen=True)
class SceneBounds:
    """Per-axis physical extent of the scene plus the diffusion signal scale.

    With ``y_min == -(y_max - y_min) / 4`` the normalization maps the floor
    relation ``cy = h / 2`` onto the same relation in diffusion space, so
    grounding commutes with (de)normalization (see :attr:`floor_consistent`).
    """

    x: tuple = (-3.0, 3.0)
    y: tuple = (-0.75, 2.25)
    z: tuple = (0.5, 6.5)
    scale: float = 2.0
    min_size: float = MIN_SIZE

    def __post_init__(self):
        for name in ("x", "y", "z"):
            lo, hi = (float(v) for v in getattr(self, name))
            object.__setattr__(self, name, (lo, hi))
            if not hi > lo:
                raise ValueError(f"bounds for {name} need max > min, got {(lo, hi)}")
        if not self.scale > 0:
            raise ValueError("diffusion scale must be positive")
        if not self.min_size > 0:
            raise ValueError("min_size must be positive")

    @property
    def lo(self) -> np.ndarray:
        return np.array([self.x[0], self.y[0], self.z[0]])

    @property
    def extent(self) -> np.ndarray:
        return np.array([self.x[1] - self.x[0], self.y[1] - self.y[0], self.z[1] - self.z[0]])

    @property
    def floor_consistent(self) -> bool:
        return math.isclose(self.y[0], -(self.y[1] - self.y[0]) / 4.0, abs_tol=1e-12)

    def to_dict(self) -> dict:
        return {"x": list(self.x), "y": list(self.y), "z": list(self.z), "scale": self.scale, "min_size": self.min_size}

    @classmethod
    def from_dict(cls, obj: dict) -> "SceneBounds":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in obj.items()})


def _arr(b) -> np.ndarray:
    if isinstance(b, (Box3D, ImageBox2D, ViewBox2D)):
        return b.as_array()
    return np.asarray(b, dtype=float)


# --------------------------------------------------------------------------
# ground constraint and view projection


def ground_constraint(b):
    """Replace the vertical center by half the height: ``cy <- h / 2``.

    Works on any 6-vector (or ``(..., 6)`` batch) in whichever space it lives in.
    """
    out = np.array(_arr(b), dtype=float, copy=True)
    out[..., 1] = out[..., 4] / 2.0
    if isinstance(b, Box3D):
        return Box3D.from_array(out)
    return out


def project_to_views(b) -> tuple[ViewBox2D, ViewBox2D]:
    cx, cy, cz, w, h, d = (float(v) for v in _arr(b))
    return ViewBox2D(cx, cz, w, d, "horizontal"), ViewBox2D(cy, cz, h, d, "vertical")


def project_to_views_batch(boxes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`project_to_views`: ``(N, 6) -> (N, 4), (N, 4)``."""
    boxes = np.asarray(boxes, dtype=float)
    hor = boxes[..., [0, 2, 3, 5]]
    ver = boxes[..., [1, 2, 4, 5]]
    return hor, ver


# --------------------------------------------------------------------------
# 3D -> camera -> image


def box_corners(b) -> np.ndarray:
    """The eight corners ``c + s * (w, h, d) / 2`` ordered by :data:`CORNER_SIGNS`."""
    a = _arr(b)
    return a[:3] + CORNER_SIGNS * (a[3:6] / 2.0)


def radar_to_camera(corners: np.ndarray, calib: CameraCalib) -> np.ndarray:
    corners = np.asarray(corners, dtype=float)
    return corners @ calib.R.T + calib.v


def pinhole(points_cam: np.ndarray, calib: CameraCalib) -> np.ndarray:
    pts = np.asarray(points_cam, dtype=float)
    Z = pts[..., 2]
    if np.any(Z <= 0):
        raise BehindCameraError("behind-camera corner")
    return np.stack([calib.fx * pts[..., 0] / Z + calib.px, calib.fy * pts[..., 1] / Z + calib.py], axis=-1)


def project_to_image(corners_cam: np.ndarray, calib: CameraCalib) -> ImageBox2D:
    """Extrema box of the pinhole projections of the given camera-frame points."""
    p = pinhole(corners_cam, calib)
    umin, vmin = p.min(axis=0)
    umax, vmax = p.max(axis=0)
    return ImageBox2D((umin + umax) / 2.0, (vmin + vmax) / 2.0, umax - umin, vmax - vmin)


def project_box(b, calib: CameraCalib) -> ImageBox2D:
    """Initial image box of a radar-frame 3D box (8-corner extrema)."""
    return project_to_image(radar_to_camera(box_corners(b), calib), calib)


def midplane_image_box(b, calib: CameraCalib) -> ImageBox2D:
    """Extrema box of the box's w x h cross-section at its center depth.

    Used as the synthetic image-plane ground truth: a flat silhouette is always
    contained in the 8-corner extrema box, which therefore overshoots.
    """
    a = _arr(b)
    signs = np.array([[-1.0, -1.0, 0.0], [-1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [1.0, 1.0, 0.0]])
    pts = a[:3] + signs * (a[3:6] / 2.0)
    return project_to_image(radar_to_camera(pts, calib), calib)


# --------------------------------------------------------------------------
# offset decoding


def apply_refinement_offsets(b, delta) -> ImageBox2D:
    cx, cy, w, h = _arr(b)
    dx, dy, dw, dh = _arr(delta)
    dw = min(dw, SIZE_OFFSET_CLIP)
    dh = min(dh, SIZE_OFFSET_CLIP)
    return ImageBox2D(cx + w * dx, cy + h * dy, math.exp(dw) * w, math.exp(dh) * h)


def apply_offsets_3d(b, delta):
    """Decode 3D offsets: linear center update scaled by size, exponential size update.

    Accepts a :class:`Box3D` (returns a :class:`Box3D`) or ``(..., 6)`` arrays.
    """
    a = _arr(b)
    dl = np.asarray(_arr(delta), dtype=float)
    sizes = a[..., 3:6]
    centers = a[..., 0:3] + sizes * dl[..., 0:3]
    new_sizes = np.exp(np.minimum(dl[..., 3:6], SIZE_OFFSET_CLIP)) * sizes
    out = np.concatenate([centers, new_sizes], axis=-1)
    if isinstance(b, Box3D):
        return Box3D.from_array(out)
    return out


def offsets_between_3d(src, dst) -> np.ndarray:
    """Inverse of :func:`apply_offsets_3d`: offsets taking ``src`` onto ``dst``."""
    s = _arr(src)
    t = _arr(dst)
    sizes = s[..., 3:6]
    return np.concatenate([(t[..., 0:3] - s[..., 0:3]) / sizes, np.log(t[..., 3:6] / sizes)], axis=-1)


def offsets_between_2d(src, dst) -> np.ndarray:
    s = _arr(src)
    t = _arr(dst)
    return np.array([(t[0] - s[0]) / s[2], (t[1] - s[1]) / s[3], math.log(t[2] / s[2]), math.log(t[3] / s[3])])


# --------------------------------------------------------------------------
# physical <-> diffusion space


def normalize(b, bounds: SceneBounds) -> np.ndarray:
    """Map physical boxes into diffusion space.

    Centers: ``lam * (2 (c - lo) / E - 1)``; extents: ``lam * (2 s / E - 1)``,
    per axis, so the scene volume and extents up to the axis span land in
    ``[-lam, lam]``.
    """
    a = _arr(b)
    lam = bounds.scale
    E = np.concatenate([bounds.extent, bounds.extent])
    off = np.concatenate([bounds.lo, np.zeros(3)])
    return lam * (2.0 * (a - off) / E - 1.0)


def denormalize(d, bounds: SceneBounds, clamp: bool = True) -> np.ndarray:
    """Inverse of :func:`normalize`; extents are floored at ``bounds.min_size`` when ``clamp``."""
    a = _arr(d)
    lam = bounds.scale
    E = np.concatenate([bounds.extent, bounds.extent])
    off = np.concatenate([bounds.lo, np.zeros(3)])
    out = off + E * (a / lam + 1.0) / 2.0
    if clamp:
        out[..., 3:6] = np.maximum(out[..., 3:6], bounds.min_size)
    return out


def ground_diffused(x, bounds: SceneBounds) -> np.ndarray:
    """Ground boxes that live in diffusion space so that their physical image has ``cy = h/2``.

    Equal to :func:`ground_constraint` when ``bounds.floor_consistent``.
    """
    phys = denormalize(x, bounds, clamp=False)
    return normalize(ground_constraint(phys), bounds)


# --------------------------------------------------------------------------
# overlap


def _lo_hi(a: np.ndarray, dims: int):
    c = a[..., :dims]
    s = a[..., dims : 2 * dims]
    return c - s / 2.0, c + s / 2.0


def iou_giou(a, b, dims: int) -> tuple[float, float]:
    """IoU and GIoU of two axis-aligned boxes in center/size form (2 or 3 dims).

    Zero-measure convention: if the union is empty both values are 0.
    """
    if dims not in (2, 3):
        raise ValueError("dims must be 2 or 3")
    A = _arr(a)
    B = _arr(b)
    alo, ahi = _lo_hi(A, dims)
    blo, bhi = _lo_hi(B, dims)
    inter = float(np.prod(np.clip(np.minimum(ahi, bhi) - np.maximum(alo, blo), 0.0, None)))
    va = float(np.prod(ahi - alo))
    vb = float(np.prod(bhi - blo))
    union = va + vb - inter
    if union <= 0.0:
        return 0.0, 0.0
    hull = float(np.prod(np.maximum(ahi, bhi) - np.minimum(alo, blo)))
    iou = inter / union
    return iou, iou - (hull - union) / hull


def giou(a, b, dims: int) -> float:
    return iou_giou(a, b, dims)[1]


def giou_loss(a, b, dims: int) -> float:
    return 1.0 - giou(a, b, dims)


def iou(a, b, dims: int = 2) -> float:
    return iou_giou(a, b, dims)[0]


def pairwise_iou_3d(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized 3D IoU matrix between ``(N, 6)`` and ``(M, 6)`` boxes."""
    a = np.asarray(a, dtype=float).reshape(-1, 6)
    b = np.asarray(b, dtype=float).reshape(-1, 6)
    alo, ahi = _lo_hi(a, 3)
    blo, bhi = _lo_hi(b, 3)
    inter = np.prod(
        np.clip(np.minimum(ahi[:, None], bhi[None]) - np.maximum(alo[:, None], blo[None]), 0.0, None), axis=-1
    )
    va = np.prod(a[:, 3:6], axis=-1)
    vb = np.prod(b[:, 3:6], axis=-1)
    union = va[:, None] + vb[None] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out
