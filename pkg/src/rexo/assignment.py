"""Set matching: Hungarian assignment, geometry-aware box cost and losses."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .geometry import SceneBounds, giou, normalize
from .structures import BACKGROUND, PERSON, Annotation, Detection

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    w3d: float = 1.0
    w2d: float = 1.0
    giou: float = 2.0
    l1: float = 5.0
    no_object: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be non-negative")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# --------------------------------------------------------------------------
# Hungarian


def _solve_square(C: np.ndarray):
    """Shortest-augmenting-path Hungarian on a square matrix.

    Returns ``(row_to_col, u, v)`` where u, v are optimal duals, i.e.
    ``C[i, j] - u[i] - v[j] >= 0`` with equality on the matching.
    """
    n = C.shape[0]
    INF = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            # first free column with the smallest reduced cost
            j1 = int(np.argmin(np.where(free, minv[1:], INF))) + 1
            delta = minv[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _lexicographic(C: np.ndarray, match: np.ndarray, u: np.ndarray, v: np.ndarray, tol: float) -> np.ndarray:
    """Among optimal matchings pick the one with the lexicographically smallest row->col vector.

    Every optimal matching lives in the equality subgraph of the optimal duals,
    so each row in turn is moved to the smallest column reachable through an
    alternating cycle that leaves earlier rows untouched.
    """
    n = C.shape[0]
    tight = np.abs(C - u[:, None] - v[None, :]) <= tol
    match = match.copy()
    owner = np.empty(n, dtype=int)
    owner[match] = np.arange(n)

    for i in range(n):
        target = match[i]
        for j in range(target):
            if not tight[i, j]:
                continue
            # re-route the row holding j to eventually free column `target`
            start = owner[j]
            if start < i:
                continue
            parent = {}
            stack = [start]
            seen_cols = {j}
            found = None
            while stack and found is None:
                k = stack.pop()
                for c in np.flatnonzero(tight[k]):
                    c = int(c)
                    if c in seen_cols:
                        continue
                    if c == target:
                        parent[c] = k
                        found = c
                        break
                    nxt = owner[c]
                    if nxt <= i:
                        continue
                    seen_cols.add(c)
                    parent[c] = k
                    stack.append(nxt)
            if found is None:
                continue
            # walk back: each row k on the path takes column c
            c = found
            while True:
                k = parent[c]
                prev = match[k]
                match[k] = c
                owner[c] = k
                if k == start:
                    break
                c = prev
            match[i] = j
            owner[j] = i
            break
    return match


def hungarian(C) -> np.ndarray:
    """Minimum-cost injective matching of rows (predictions) to columns (GT).

    Returns an int array of length ``n_rows`` with the matched column or -1.
    The matching has size ``min(n_rows, n_cols)``.  Among equal-cost optima the
    result is the one whose row -> column list is lexicographically smallest,
    i.e. lower prediction indices are matched first and to lower GT indices.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix must be finite")
    nr, nc = C.shape
    if nr == 0 or nc == 0:
        return np.full(nr, -1, dtype=int)
    n = max(nr, nc)
    sq = np.zeros((n, n))
    sq[:nr, :nc] = C
    match, u, v = _solve_square(sq)
    tol = 1e-10 * max(1.0, float(np.max(np.abs(C))))
    match = _lexicographic(sq, match, u, v, tol)
    match = match[:nr].copy()
    match[match >= nc] = -1
    return match


def assignment_cost(C, match) -> float:
    C = np.asarray(C, dtype=float)
    return float(sum(C[i, j] for i, j in enumerate(match) if j >= 0))


# --------------------------------------------------------------------------
# costs and losses


def _l1_3d(pred: Detection, gt: Annotation, bounds: SceneBounds) -> float:
    return float(np.abs(normalize(pred.box3d, bounds) - normalize(gt.box3d, bounds)).sum())


def _l1_2d(pred: Detection, gt: Annotation, image_size: tuple) -> float:
    W, H = image_size
    d = np.abs(pred.box2d.as_array() - gt.box2d.as_array())
    return float(d[0] / W + d[1] / H + d[2] / W + d[3] / H)


def box_terms(pred: Detection, gt: Annotation, bounds: SceneBounds, image_size: tuple) -> tuple:
    """Unweighted ``(1 - GIoU_3D, L1_3D, 1 - GIoU_2D, L1_2D)``."""
    return (
        1.0 - giou(pred.box3d, gt.box3d, 3),
        _l1_3d(pred, gt, bounds),
        1.0 - giou(pred.box2d, gt.box2d, 2),
        _l1_2d(pred, gt, image_size),
    )


def box_cost_ga(
    pred: Detection,
    gt: Annotation,
    w: LossWeights = LossWeights(),
    bounds: SceneBounds = SceneBounds(),
    image_size: tuple = (320, 240),
) -> float:
    """Geometry-aware box cost: weighted GIoU + L1 in radar space plus the same on the image plane.

    L1 is taken over diffusion-space parameters in 3D and image-size-normalized
    parameters in 2D.
    """
    g3, l3, g2, l2 = box_terms(pred, gt, bounds, image_size)
    return w.w3d * (w.giou * g3 + w.l1 * l3) + w.w2d * (w.giou * g2 + w.l1 * l2)


def classification_loss(probs, match, gt_classes, w: LossWeights = LossWeights()) -> float:
    """Summed NLL of matched classes; unmatched predictions target background, down-weighted."""
    probs = np.asarray(probs, dtype=float).reshape(-1, 2)
    total = 0.0
    for i, j in enumerate(match):
        if j >= 0:
            total -= math.log(max(probs[i, gt_classes[j]], PROB_FLOOR))
        elif w.no_object > 0:
            total -= w.no_object * math.log(max(probs[i, BACKGROUND], PROB_FLOOR))
    return total


@dataclass(frozen=True)
class LossBreakdown:
    cls: float
    giou3d: float
    l1_3d: float
    giou2d: float
    l1_2d: float
    total: float

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def cost_matrix(
    preds, gts, w: LossWeights = LossWeights(), bounds: SceneBounds = SceneBounds(), image_size=(320, 240)
) -> np.ndarray:
    C = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            C[i, j] = -p.scores[g.class_id] + box_cost_ga(p, g, w, bounds, image_size)
    return C


def match_and_loss(
    preds, gts, w: LossWeights = LossWeights(), bounds: SceneBounds = SceneBounds(), image_size=(320, 240)
) -> tuple[np.ndarray, LossBreakdown]:
    """Hungarian match on class + geometry-aware cost, then the per-term loss sums."""
    if len(preds) < len(gts):
        raise ValueError(f"need at least as many predictions ({len(preds)}) as ground truths ({len(gts)})")
    C = cost_matrix(preds, gts, w, bounds, image_size)
    match = hungarian(C) if len(gts) else np.full(len(preds), -1, dtype=int)
    cls = classification_loss([p.scores for p in preds], match, [g.class_id for g in gts], w)
    sums = np.zeros(4)
    for i, j in enumerate(match):
        if j >= 0:
            sums += box_terms(preds[i], gts[j], bounds, image_size)
    g3, l3, g2, l2 = sums
    total = cls + w.w3d * (w.giou * g3 + w.l1 * l3) + w.w2d * (w.giou * g2 + w.l1 * l2)
    return match, LossBreakdown(cls, g3, l3, g2, l2, total)
