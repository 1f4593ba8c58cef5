"""Box diffusion pipeline: training-path noising, the radar-conditioned denoiser and DDIM inference.

Detectors plug in through a single call ``detector(DetectorInput) -> DetectorOutput``.
For every current box the pipeline projects it onto both radar views, crops one
RoIAlign feature per view at the matching pyramid level and hands the
concatenated crop pair to the detector, which answers with 3D offsets, image
refinement offsets and two class probabilities.  Two reference detectors live
in :mod:`rexo.detectors`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Protocol

import numpy as np

from . import association
from .diffusion import NoiseSchedule, build_schedule, ddim_sigma, ddim_step, q_sample, tau_subsequence, timestep_embedding
from .geometry import (
    BehindCameraError,
    Box3D,
    CameraCalib,
    SceneBounds,
    apply_offsets_3d,
    apply_refinement_offsets,
    denormalize,
    ground_constraint,
    ground_diffused,
    normalize,
    pairwise_iou_3d,
    project_box,
    project_to_views_batch,
)
from .structures import BACKGROUND, PERSON, Annotation, Detection

log = logging.getLogger(__name__)


@dataclass
class DetectorInput:
    """Everything a detector may look at for one batch of boxes at one timestep.

    ``crops`` is (N, C, r, 2r): horizontal crop then vertical crop on the last
    axis.  ``boxes`` are the physical boxes the crops were taken from and the
    reference for decoding offsets.  ``view_boxes`` are the clamped per-view
    extents ``(lo_a, hi_a, lo_b, hi_b)`` in meters, shape (N, 2, 4).
    """

    crops: np.ndarray
    t: int
    embedding: np.ndarray
    boxes: np.ndarray
    view_boxes: np.ndarray
    empty: np.ndarray
    calib: CameraCalib
    bounds: SceneBounds

    def __post_init__(self):
        n = len(self.boxes)
        if not (len(self.crops) == len(self.view_boxes) == len(self.empty) == n):
            raise ValueError("detector input arrays disagree on the batch size")

    @property
    def N(self) -> int:
        return len(self.boxes)


@dataclass
class DetectorOutput:
    offsets3d: np.ndarray  # (N, 6)
    offsets2d: np.ndarray  # (N, 4)
    scores: np.ndarray  # (N, 2) person / background

    def check(self, n: int):
        o3 = np.asarray(self.offsets3d, dtype=float)
        o2 = np.asarray(self.offsets2d, dtype=float)
        sc = np.asarray(self.scores, dtype=float)
        if o3.shape != (n, 6) or o2.shape != (n, 4) or sc.shape != (n, 2):
            raise ValueError(f"detector output shapes {o3.shape}, {o2.shape}, {sc.shape} do not match N = {n}")
        for i in range(n):
            if not (np.all(np.isfinite(o3[i])) and np.all(np.isfinite(o2[i])) and np.all(np.isfinite(sc[i]))):
                raise ValueError(f"detector returned non-finite values for box {i}")
            if sc[i].min() < 0 or abs(sc[i].sum() - 1.0) > 1e-6:
                raise ValueError(f"detector scores for box {i} are not a probability vector: {sc[i]}")
        return o3, o2, sc


class Detector(Protocol):
    def __call__(self, inp: DetectorInput) -> DetectorOutput: ...


@dataclass(frozen=True)
class InferenceConfig:
    T: int = 1000
    schedule: str = "cosine"
    steps: int = 1
    N: int = 10
    threshold: float = 0.5
    eta: float = 0.0
    grounding: bool = True
    renewal: bool = False
    nms_iou: float | None = 0.5
    r: int = 7
    L: int = 4
    embed_dim: int = 32

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 1 <= self.steps <= self.T:
            raise ValueError(f"steps must be in [1, T], got {self.steps}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.nms_iou is not None and not 0.0 < self.nms_iou <= 1.0:
            raise ValueError("nms_iou must be in (0, 1] or null")
        if self.r < 1 or self.L < 1:
            raise ValueError("r and L must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class StepRecord:
    t: int
    t_prev: int
    boxes: np.ndarray  # physical boxes the crops were taken from
    x0_boxes: np.ndarray  # decoded physical x0 estimates
    scores: np.ndarray
    n_crops: int


@dataclass
class InferenceTrace:
    steps: list = field(default_factory=list)
    behind_camera: int = 0
    suppressed: int = 0
    renewed: int = 0


# --------------------------------------------------------------------------
# training path


def pad_and_diffuse(
    gt: list,
    N_train: int,
    t: int,
    s: NoiseSchedule,
    bounds: SceneBounds,
    rng: np.random.Generator,
) -> np.ndarray:
    """Normalized GT boxes padded with N(0, I) boxes to ``N_train``, noised to step t and grounded."""
    if N_train < len(gt):
        raise ValueError(f"N_train ({N_train}) is smaller than the number of ground-truth boxes ({len(gt)})")
    s.check_t(t)
    x0 = np.empty((N_train, 6))
    for i, a in enumerate(gt):
        box = a.box3d if isinstance(a, Annotation) else a
        x0[i] = normalize(box, bounds)
    x0[len(gt) :] = rng.standard_normal((N_train - len(gt), 6))
    eps = rng.standard_normal((N_train, 6))
    return ground_diffused(q_sample(x0, t, eps, s), bounds)


# --------------------------------------------------------------------------
# denoising step


def current_boxes(x_t: np.ndarray, bounds: SceneBounds, grounding: bool = True) -> np.ndarray:
    """Physical boxes for the crops: clip to the diffusion range, denormalize with size floor, ground."""
    lam = bounds.scale
    x = np.clip(x_t, -lam, lam)
    if grounding:
        x = ground_diffused(x, bounds)
    phys = denormalize(x, bounds, clamp=True)
    if grounding:
        phys = ground_constraint(phys)
    return phys


def gather_crops(phys: np.ndarray, pyramids, r: int = 7):
    """Two RoIAlign crops per box, one per view: returns crops (N, C, r, 2r), view extents, empty flags."""
    hor_p, ver_p = pyramids
    hor_b, ver_b = project_to_views_batch(phys)
    n = len(phys)
    crops = np.zeros((n, hor_p.channels, r, 2 * r))
    extents = np.zeros((n, 2, 4))
    empty = np.zeros((n, 2), dtype=bool)
    for i in range(n):
        parts = []
        for v, (pyr, vb) in enumerate(((hor_p, hor_b[i]), (ver_p, ver_b[i]))):
            level = pyr.levels[association.assign_level(vb, pyr)]
            crop, is_empty = association.roi_align(level, vb, r)
            extents[i, v] = association.clamp_box(vb, level)
            empty[i, v] = is_empty
            parts.append(crop)
        crops[i] = association.crop_and_concat(parts[0], parts[1])
    return crops, extents, empty


def denoising_det(
    x_t: np.ndarray,
    t: int,
    pyramids,
    detector: Detector,
    bounds: SceneBounds,
    calib: CameraCalib,
    r: int = 7,
    embed_dim: int = 32,
    grounding: bool = True,
):
    """One detector pass over a batch of diffused boxes.

    Returns ``(x0_hat, scores, phys, x0_phys, offsets2d)`` where ``x0_hat`` is
    back in diffusion space for the sampler and ``phys`` are the boxes the
    crops were taken from.
    """
    x_t = np.asarray(x_t, dtype=float).reshape(-1, 6)
    phys = current_boxes(x_t, bounds, grounding)
    crops, extents, empty = gather_crops(phys, pyramids, r)
    inp = DetectorInput(
        crops=crops,
        t=int(t),
        embedding=timestep_embedding(t, embed_dim),
        boxes=phys,
        view_boxes=extents,
        empty=empty,
        calib=calib,
        bounds=bounds,
    )
    try:
        out = detector(inp)
        o3, o2, sc = out.check(len(phys))
    except Exception as exc:
        bad = getattr(exc, "box_index", None)
        where = f" (box {bad})" if bad is not None else ""
        raise RuntimeError(f"detector failed at t={t}{where}: {exc}") from exc
    x0_phys = apply_offsets_3d(phys, o3)
    x0_phys[:, 3:6] = np.maximum(x0_phys[:, 3:6], bounds.min_size)
    if grounding:
        x0_phys = ground_constraint(x0_phys)
    return normalize(x0_phys, bounds), sc, phys, x0_phys, o2


# --------------------------------------------------------------------------
# inference


def nms_3d(boxes: np.ndarray, scores: np.ndarray, iou_thr: float) -> np.ndarray:
    """Greedy 3D-IoU suppression; returns kept indices in descending score (ties by index)."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    if not order:
        return np.zeros(0, dtype=int)
    ious = pairwise_iou_3d(boxes, boxes)
    keep = []
    for i in order:
        if all(ious[i, j] <= iou_thr for j in keep):
            keep.append(i)
    return np.array(keep, dtype=int)


def run_inference(
    frames,
    detector: Detector,
    calib: CameraCalib,
    cfg: InferenceConfig = InferenceConfig(),
    bounds: SceneBounds = SceneBounds(),
    seed: int = 0,
    frame_id: int = 0,
    schedule: NoiseSchedule | None = None,
    taus=None,
    pyramids=None,
    trace: InferenceTrace | None = None,
    on_step: Callable[[StepRecord], None] | None = None,
) -> list:
    """DDIM reverse process from N(0, I) boxes to scored detections for one frame.

    Each box owns a random stream seeded by ``(seed, frame_id, box index)``,
    so results do not depend on batch order or on worker scheduling.
    """
    s = schedule if schedule is not None else build_schedule(cfg.T, cfg.schedule)
    taus = tau_subsequence(s.T, cfg.steps) if taus is None else np.asarray(taus, dtype=int)
    if len(taus) == 0:
        raise ValueError("empty timestep sub-sequence")
    if np.any(np.diff(taus) <= 0) or taus[0] < 1 or taus[-1] > s.T:
        raise ValueError("timestep sub-sequence must be strictly increasing within [1, T]")
    if pyramids is None:
        pyramids = association.build_pyramid(frames, cfg.L)
    trace = trace if trace is not None else InferenceTrace()

    rngs = [np.random.default_rng([seed, frame_id, i]) for i in range(cfg.N)]
    x = np.stack([g.standard_normal(6) for g in rngs])
    if cfg.grounding:
        x = ground_diffused(x, bounds)

    desc = taus[::-1]
    x0_phys = sc = o2 = None
    for k, t in enumerate(desc):
        t_prev = int(desc[k + 1]) if k + 1 < len(desc) else 0
        x0, sc, phys, x0_phys, o2 = denoising_det(
            x, int(t), pyramids, detector, bounds, calib, cfg.r, cfg.embed_dim, cfg.grounding
        )
        rec = StepRecord(int(t), t_prev, phys, x0_phys, sc, 2 * len(phys))
        trace.steps.append(rec)
        if on_step is not None:
            on_step(rec)
        sigma = ddim_sigma(int(t), t_prev, cfg.eta, s)
        noise = np.stack([g.standard_normal(6) for g in rngs]) if sigma > 0 else np.zeros_like(x)
        x = ddim_step(x, x0, int(t), t_prev, sigma, noise, s)
        if cfg.renewal and t_prev > 0:
            stale = sc[:, PERSON] <= cfg.threshold
            for i in np.flatnonzero(stale):
                x[i] = rngs[i].standard_normal(6)
            trace.renewed += int(stale.sum())
        if cfg.grounding:
            x = ground_diffused(x, bounds)

    keep = np.flatnonzero(sc[:, PERSON] > cfg.threshold)
    if cfg.nms_iou is not None and len(keep):
        kept = nms_3d(x0_phys[keep], sc[keep, PERSON], cfg.nms_iou)
        trace.suppressed += len(keep) - len(kept)
        keep = keep[kept]
    else:
        keep = np.array(sorted(keep, key=lambda i: (-sc[i, PERSON], i)), dtype=int)

    dets = []
    for i in keep:
        box = Box3D.from_array(x0_phys[i])
        try:
            b_init = project_box(box, calib)
        except BehindCameraError:
            trace.behind_camera += 1
            continue
        dets.append(Detection(box, apply_refinement_offsets(b_init, o2[i]), tuple(sc[i]), frame_id))
    if trace.behind_camera:
        log.debug("frame %d: %d detection(s) behind the camera dropped", frame_id, trace.behind_camera)
    return dets


def grounded_ok(boxes: np.ndarray) -> bool:
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 6)
    return bool(np.all(boxes[:, 1] == boxes[:, 4] / 2.0))


__all__ = [
    "BACKGROUND",
    "PERSON",
    "DetectorInput",
    "DetectorOutput",
    "InferenceConfig",
    "InferenceTrace",
    "StepRecord",
    "pad_and_diffuse",
    "current_boxes",
    "gather_crops",
    "denoising_det",
    "nms_3d",
    "run_inference",
    "grounded_ok",
]
