"""Deterministic SVG figures: IoU histograms and radar heatmaps with box overlays.

SVG is written by hand with fixed number formatting so identical inputs give
byte-identical files.  Heatmaps are embedded as base64 PNG rasters.
"""

from __future__ import annotations

import base64
import io
from xml.sax.saxutils import escape

import numpy as np
from PIL import Image

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")

# anchor colors of a dark-to-bright ramp for heatmaps
_RAMP = np.array(
    [
        [0, 0, 4],
        [40, 11, 84],
        [101, 21, 110],
        [159, 42, 99],
        [212, 72, 66],
        [245, 125, 21],
        [250, 193, 39],
        [252, 255, 164],
    ],
    dtype=float,
)


def _f(v: float) -> str:
    return f"{v:.2f}"


def histogram_svg(series, markers=(0.5, 0.75), width: int = 480, height: int = 300, title: str = "IoU") -> str:
    """Bar histogram over [0, 1]; ``series`` is a list of ``(label, counts, edges)``.

    Several series share the axes as translucent overlays; dotted vertical
    lines mark the given IoU values.
    """
    ml, mr, mt, mb = 48, 16, 28, 40
    pw, ph = width - ml - mr, height - mt - mb
    ymax = max([int(np.max(c)) for _, c, _ in series if len(c)] + [1])

    def X(u):
        return ml + u * pw

    def Y(c):
        return mt + ph - (c / ymax) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{_f(width / 2)}" y="18" font-family="sans-serif" font-size="13" text-anchor="middle">{escape(title)}</text>',
    ]
    for k, (label, counts, edges) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            if c <= 0:
                continue
            out.append(
                f'<rect x="{_f(X(lo))}" y="{_f(Y(c))}" width="{_f(X(hi) - X(lo))}" height="{_f(Y(0) - Y(c))}" '
                f'fill="{color}" fill-opacity="0.5" stroke="{color}" stroke-width="0.5"/>'
            )
        ly = mt + 14 * k
        out.append(f'<rect x="{_f(ml + 8)}" y="{_f(ly + 2)}" width="10" height="10" fill="{color}" fill-opacity="0.5"/>')
        out.append(
            f'<text x="{_f(ml + 22)}" y="{_f(ly + 11)}" font-family="sans-serif" font-size="11">{escape(str(label))}</text>'
        )
    for m in markers:
        out.append(
            f'<line x1="{_f(X(m))}" y1="{_f(mt)}" x2="{_f(X(m))}" y2="{_f(mt + ph)}" stroke="black" '
            f'stroke-width="1" stroke-dasharray="2,3"/>'
        )
    # axes and ticks
    out.append(f'<line x1="{ml}" y1="{_f(mt + ph)}" x2="{_f(ml + pw)}" y2="{_f(mt + ph)}" stroke="black"/>')
    out.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{_f(mt + ph)}" stroke="black"/>')
    for u in (0.0, 0.25, 0.5, 0.75, 1.0):
        out.append(
            f'<text x="{_f(X(u))}" y="{_f(mt + ph + 14)}" font-family="sans-serif" font-size="10" text-anchor="middle">{u:.2f}</text>'
        )
    for c in sorted({0, ymax // 2, ymax}):
        out.append(
            f'<text x="{ml - 4}" y="{_f(Y(c) + 3)}" font-family="sans-serif" font-size="10" text-anchor="end">{c}</text>'
        )
    out.append(
        f'<text x="{_f(ml + pw / 2)}" y="{height - 6}" font-family="sans-serif" font-size="11" text-anchor="middle">IoU</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def colorize(arr: np.ndarray) -> np.ndarray:
    """Map a 2D array to RGB bytes with a min-max normalized ramp."""
    a = np.asarray(arr, dtype=float)
    lo, hi = float(a.min()), float(a.max())
    u = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
    pos = u * (len(_RAMP) - 1)
    i0 = np.clip(np.floor(pos).astype(int), 0, len(_RAMP) - 2)
    frac = (pos - i0)[..., None]
    rgb = _RAMP[i0] * (1 - frac) + _RAMP[i0 + 1] * frac
    return np.round(rgb).astype(np.uint8)


def png_bytes(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def heatmap_image(view: np.ndarray) -> np.ndarray:
    """(A, B) view map -> image rows = depth (far at top), columns = lateral."""
    return colorize(np.asarray(view, dtype=float).T[::-1])


def heatmap_svg(view: np.ndarray, grid, gt_boxes=(), pred_boxes=(), scale: int = 2, title: str = "") -> str:
    """Heatmap raster with view-plane boxes ``(center_a, center_b, size_a, size_b)`` drawn on top.

    Ground truth in green, predictions in dashed red.
    """
    A, B = np.asarray(view).shape
    W, H = A * scale, B * scale
    ra, rb = grid.res
    png = base64.b64encode(png_bytes(heatmap_image(view))).decode("ascii")
    top = 20

    def rect(b, color, dash):
        ca, cb, sa, sb = (float(v) for v in b)
        x0 = (ca - sa / 2 - grid.a[0]) / ra * scale
        y0 = (grid.b[1] - (cb + sb / 2)) / rb * scale + top
        extra = ' stroke-dasharray="4,2"' if dash else ""
        return (
            f'<rect x="{_f(x0)}" y="{_f(y0)}" width="{_f(sa / ra * scale)}" height="{_f(sb / rb * scale)}" '
            f'fill="none" stroke="{color}" stroke-width="1.5"{extra}/>'
        )

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" width="{W}" height="{H + top}" viewBox="0 0 {W} {H + top}">',
        f'<rect x="0" y="0" width="{W}" height="{H + top}" fill="white"/>',
        f'<text x="4" y="14" font-family="sans-serif" font-size="12">{escape(title)}</text>',
        f'<image x="0" y="{top}" width="{W}" height="{H}" preserveAspectRatio="none" '
        f'xlink:href="data:image/png;base64,{png}"/>',
    ]
    out += [rect(b, "#00e000", False) for b in gt_boxes]
    out += [rect(b, "#ff3030", True) for b in pred_boxes]
    out.append("</svg>")
    return "\n".join(out) + "\n"
