"""Reference detectors honoring the ``DetectorInput -> DetectorOutput`` contract.

``OracleDetector`` is handed the frame's ground truth and returns the offsets
that decode each box exactly onto its assigned target.  ``CentroidDetector``
is a non-learned heuristic that only looks at the crop pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import label, maximum_filter

from .assignment import hungarian
from .geometry import (
    BehindCameraError,
    apply_offsets_3d,
    midplane_image_box,
    normalize,
    offsets_between_2d,
    offsets_between_3d,
    project_box,
)
from .pipeline import DetectorInput, DetectorOutput

# image-box correction used when nothing better is known: the 8-corner
# extrema box is wider and taller than the visible silhouette
SHRINK_PRIOR = np.array([0.0, 0.0, math.log(0.75), math.log(0.85)])


def projection_bias_offsets(box, calib) -> np.ndarray:
    """Offsets that take the 8-corner extrema box of ``box`` to its mid-depth silhouette box."""
    try:
        return offsets_between_2d(project_box(box, calib), midplane_image_box(box, calib))
    except (BehindCameraError, ValueError, ZeroDivisionError):
        return SHRINK_PRIOR.copy()


class OracleDetector:
    """Ground-truth-aware stand-in for a trained head.

    Current boxes are assigned to ground truth by Hungarian matching on the L1
    distance in diffusion space.  Matched boxes get the exact offsets onto
    their target (plus uniform noise in ``[-eta0, eta0]`` when ``eta0 > 0``)
    and person score ``1 - eta0``; the rest keep their box and are background.
    """

    def __init__(self, gts, eta0: float = 0.0, seed: int = 0):
        if not 0.0 <= eta0 < 0.5:
            raise ValueError("eta0 must lie in [0, 0.5)")
        self.gts = list(gts)
        self.eta0 = float(eta0)
        self.seed = int(seed)

    def __call__(self, inp: DetectorInput) -> DetectorOutput:
        n = inp.N
        o3 = np.zeros((n, 6))
        o2 = np.tile(SHRINK_PRIOR, (n, 1))
        sc = np.tile([0.0, 1.0], (n, 1))
        if not self.gts or n == 0:
            return DetectorOutput(o3, o2, sc)
        cur = normalize(inp.boxes, inp.bounds)
        tgt = np.array([normalize(g.box3d, inp.bounds) for g in self.gts])
        cost = np.abs(cur[:, None, :] - tgt[None, :, :]).sum(axis=-1)
        match = hungarian(cost)
        for i, j in enumerate(match):
            if j < 0:
                continue
            gt = self.gts[j]
            o3[i] = offsets_between_3d(inp.boxes[i], gt.box3d.as_array())
            try:
                o2[i] = offsets_between_2d(project_box(gt.box3d, inp.calib), gt.box2d)
            except BehindCameraError:
                pass
            if self.eta0 > 0:
                rng = np.random.default_rng([self.seed, inp.t, i])
                o3[i] += rng.uniform(-self.eta0, self.eta0, 6)
                o2[i] += rng.uniform(-self.eta0, self.eta0, 4)
            sc[i] = (1.0 - self.eta0, self.eta0)
        return DetectorOutput(o3, o2, sc)


@dataclass(frozen=True)
class CentroidDetector:
    """Energy-centroid heuristic on the crop pair.

    Horizontal view: among the local maxima of the crop (averaged over
    channels) the one with the best peak value discounted by a Gaussian in its
    distance to the crop center is chosen; the crop is cut at
    ``rel_threshold`` of that peak and the connected blob holding it gives the lateral and depth centroids and second moments.  Vertical view:
    columns are weighted by a Gaussian around the horizontal depth centroid,
    so only returns at the same depth count, then the same cut is applied to
    all remaining mass.  That depth gating is the cross-view association.

    A blob spread over samples of spacing ``s`` with variance ``var`` has
    extent ``sqrt(12 var + s^2)``, exact for a flat run of samples.  Coarse
    crops measure extents poorly, so each extent is blended with
    ``prior_size`` by precision, the measurement counting with variance
    ``s^2`` and the prior with ``prior_sd^2``.  A crop narrower than the prior
    along an axis cannot see the whole blob and falls back to the prior.

    The person score is ``sigmoid(gain * (peak - bias) - (dz / depth_tol)^2)``,
    with ``peak`` the weaker of the two view peaks and ``dz`` the gap between
    the depth centroids seen by the two views.
    """

    rel_threshold: float = 0.3
    gain: float = 12.0
    bias: float = 0.15
    depth_tol: float = 0.3
    prior_size: tuple = (0.5, 1.7, 0.3)
    prior_sd: tuple = (0.15, 0.25, 0.1)
    min_peak: float = 1e-6
    candidate_floor: float = 0.25
    center_sd: float = 0.35

    @staticmethod
    def _axes(shape, ext):
        r_a, r_b = shape
        lo_a, hi_a, lo_b, hi_b = ext
        sa = (hi_a - lo_a) / r_a
        sb = (hi_b - lo_b) / r_b
        return lo_a + (np.arange(r_a) + 0.5) * sa, lo_b + (np.arange(r_b) + 0.5) * sb, sa, sb

    def _axis(self, profile, u, spacing, k):
        """Centroid and extent along one axis from a non-negative mass profile.

        A crop too narrow to hold a person cannot measure its extent and
        returns the prior.
        """
        r = len(profile)
        p = profile / profile.sum()
        mean = float(p @ u)
        var = float(p @ (u - mean) ** 2)
        prior = self.prior_size[k]
        if spacing * r < prior:
            return mean, prior
        meas = math.sqrt(12.0 * var + spacing * spacing)
        pm = 1.0 / (spacing * spacing)
        pp = 1.0 / self.prior_sd[k] ** 2
        return mean, (pm * meas + pp * prior) / (pm + pp)

    def _select_peak(self, m, top):
        """Local maximum maximizing ``value * exp(-d^2 / (2 center_sd^2))``, d in crop-size units."""
        r_a, r_b = m.shape
        cand = (m == maximum_filter(m, size=3, mode="nearest")) & (m >= self.candidate_floor * top)
        ia, ib = np.nonzero(cand)
        da = (ia + 0.5) / r_a - 0.5
        db = (ib + 0.5) / r_b - 0.5
        score = m[ia, ib] * np.exp(-(da * da + db * db) / (2.0 * self.center_sd**2))
        k = int(np.argmax(score))
        return int(ia[k]), int(ib[k])

    def _cut(self, m, peak, mask=None):
        keep = m >= self.rel_threshold * peak
        if mask is not None:
            keep &= mask
        w = np.where(keep, m - self.rel_threshold * peak, 0.0)
        return w if w.sum() > 0 else keep.astype(float)

    def estimate(self, crop_pair: np.ndarray, view_boxes: np.ndarray):
        """``(box (6,), peak, dz)`` from one crop pair, or ``None`` when a view has no signal."""
        r = crop_pair.shape[-2]
        hor = crop_pair[..., :r].mean(axis=0)
        ver = crop_pair[..., r:].mean(axis=0)
        top = float(hor.max())
        if not top > self.min_peak:
            return None
        ia, ib = self._select_peak(hor, top)
        ph = float(hor[ia, ib])
        ua, ub, sa, sb = self._axes(hor.shape, view_boxes[0])
        lab, _ = label(hor >= self.rel_threshold * ph)
        wh = self._cut(hor, ph, lab == lab[ia, ib])
        cx, w = self._axis(wh.sum(axis=1), ua, sa, 0)
        zh, dh = self._axis(wh.sum(axis=0), ub, sb, 2)

        va_, vb_, sva, svb = self._axes(ver.shape, view_boxes[1])
        band = max(dh / 2.0, sb, svb)
        gate = np.exp(-0.5 * ((vb_ - zh) / band) ** 2)[None, :]
        gated = ver * gate
        pv = float(gated.max())
        if not pv > self.min_peak:
            return None
        wv = self._cut(gated, pv)
        cy, h = self._axis(wv.sum(axis=1), va_, sva, 1)
        zv, dv = self._axis(wv.sum(axis=0), vb_, svb, 2)
        box = np.array([cx, cy, 0.5 * (zh + zv), w, h, 0.5 * (dh + dv)])
        return box, min(ph, pv), abs(zh - zv)

    def __call__(self, inp: DetectorInput) -> DetectorOutput:
        n = inp.N
        o3 = np.zeros((n, 6))
        o2 = np.tile(SHRINK_PRIOR, (n, 1))
        sc = np.tile([0.0, 1.0], (n, 1))
        for i in range(n):
            if inp.empty[i].any():
                continue
            est = self.estimate(inp.crops[i], inp.view_boxes[i])
            if est is None:
                continue
            box, peak, dz = est
            o3[i] = offsets_between_3d(inp.boxes[i], box)
            logit = self.gain * (peak - self.bias) - (dz / self.depth_tol) ** 2
            p = 1.0 / (1.0 + math.exp(-min(max(logit, -50.0), 50.0)))
            sc[i] = (p, 1.0 - p)
            o2[i] = projection_bias_offsets(apply_offsets_3d(inp.boxes[i], o3[i]), inp.calib)
        return DetectorOutput(o3, o2, sc)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}
