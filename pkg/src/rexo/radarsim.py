"""Synthetic multi-view radar heatmaps.

Two render paths:

* the FFT chain: point scatterers -> idealized ADC cube (fast time x pulses x
  elements) -> 3D FFT magnitude summed over Doppler -> range/angle polar map ->
  bilinear resampling onto the Cartesian view grid -> ``log(1 + x)``;
* a Gaussian blob path that skips the signal chain, for fast fixtures.

Each view is treated as a planar array looking along +z: the horizontal array
resolves azimuth in the x-z plane, the vertical array elevation in the y-z
plane.  A scatterer's in-plane range and angle are used for its view, which is
exactly the projection the view heatmap represents.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import map_coordinates

from .geometry import SceneBounds

log = logging.getLogger(__name__)

VIEWS = ("horizontal", "vertical")
HEATMAP_MAGIC = b"RXH1"


@dataclass(frozen=True)
class Scatterer:
    position: tuple
    reflectivity: float = 1.0

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3 or not all(math.isfinite(v) for v in pos):
            raise ValueError(f"bad scatterer position {self.position}")
        if not self.reflectivity >= 0:
            raise ValueError("reflectivity must be non-negative")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "reflectivity", float(self.reflectivity))


@dataclass(frozen=True)
class RadarArrayConfig:
    """Idealized array and processing parameters.

    ``range_fft`` / ``angle_fft`` are zero-padded FFT lengths; the range bin
    size is ``max_range / range_fft`` and angle bins are uniform in sin(theta).
    """

    n_adc: int = 64
    n_pulse: int = 2
    n_elem: int = 64
    max_range: float = 8.0
    spacing: float = 0.5
    fov_deg: float = 150.0
    range_fft: int = 512
    angle_fft: int = 1024
    window: str = "rect"

    def __post_init__(self):
        for name in ("n_adc", "n_pulse", "n_elem"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be >= 2")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        if self.range_fft < self.n_adc or self.angle_fft < self.n_elem:
            raise ValueError("FFT lengths must be at least the cube dimensions")
        if not 0 < self.fov_deg <= 180:
            raise ValueError("fov_deg must be in (0, 180]")
        if self.window not in ("rect", "hann"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def range_res(self) -> float:
        return self.max_range / self.range_fft


@dataclass(frozen=True)
class ViewGrid:
    """Cartesian grid of one view: axis a (lateral or height) x axis b (depth)."""

    a: tuple
    b: tuple
    shape: tuple

    @property
    def res(self) -> tuple:
        return ((self.a[1] - self.a[0]) / self.shape[0], (self.b[1] - self.b[0]) / self.shape[1])

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        ra, rb = self.res
        return (
            self.a[0] + (np.arange(self.shape[0]) + 0.5) * ra,
            self.b[0] + (np.arange(self.shape[1]) + 0.5) * rb,
        )

    def cell_of(self, a: float, b: float) -> tuple[int, int]:
        ra, rb = self.res
        return int(math.floor((a - self.a[0]) / ra)), int(math.floor((b - self.b[0]) / rb))


def view_grids(bounds: SceneBounds, shape=(256, 128)) -> dict:
    shape = tuple(int(v) for v in shape)
    return {
        "horizontal": ViewGrid(bounds.x, bounds.z, shape),
        "vertical": ViewGrid(bounds.y, bounds.z, shape),
    }


@dataclass
class RadarFrameSet:
    """Stacked per-view heatmaps: ``hor`` is (M, W, D), ``ver`` is (M, H, D)."""

    hor: np.ndarray
    ver: np.ndarray
    grids: dict = field(default_factory=dict)

    def __post_init__(self):
        self.hor = np.asarray(self.hor, dtype=float)
        self.ver = np.asarray(self.ver, dtype=float)
        if self.hor.ndim != 3 or self.ver.ndim != 3:
            raise ValueError("heatmaps must be (M, A, D) tensors")
        if self.hor.shape[0] != self.ver.shape[0] or self.hor.shape[0] < 1:
            raise ValueError("both views need the same number of frames M >= 1")
        if self.hor.shape[2] != self.ver.shape[2]:
            raise ValueError("views must share the depth axis")
        if not (np.all(np.isfinite(self.hor)) and np.all(np.isfinite(self.ver))):
            raise ValueError("non-finite heatmap values")

    @property
    def M(self) -> int:
        return self.hor.shape[0]

    def view(self, name: str) -> np.ndarray:
        return self.hor if name == "horizontal" else self.ver


def _view_coords(scene: Sequence[Scatterer], view: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not scene:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    pos = np.array([s.position for s in scene], dtype=float)
    refl = np.array([s.reflectivity for s in scene], dtype=float)
    lateral = pos[:, 0] if view == "horizontal" else pos[:, 1]
    return lateral, pos[:, 2], refl


def synthesize_cube(scene: Sequence[Scatterer], cfg: RadarArrayConfig, array: str) -> np.ndarray:
    """Idealized static-scene data cube, shape ``(n_adc, n_pulse, n_elem)``.

    Scatterer i at in-plane range r and angle theta adds
    ``a_i exp(j 2 pi (r / max_range) n) exp(j 2 pi spacing sin(theta) k)``
    for fast-time sample n and element k; every pulse sees the same return.
    """
    if array not in VIEWS:
        raise ValueError(f"unknown array {array!r}")
    lateral, depth, refl = _view_coords(scene, array)
    cube = np.zeros((cfg.n_adc, cfg.n_pulse, cfg.n_elem), dtype=complex)
    if len(refl) == 0:
        return cube
    r = np.hypot(lateral, depth)
    keep = r < cfg.max_range
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        log.warning("%d scatterer(s) beyond max_range %.2f m excluded", dropped, cfg.max_range)
    r, lateral, refl = r[keep], lateral[keep], refl[keep]
    if len(r) == 0:
        return cube
    with np.errstate(invalid="ignore", divide="ignore"):
        sin_t = np.where(r > 0, lateral / r, 0.0)
    n = np.arange(cfg.n_adc)
    k = np.arange(cfg.n_elem)
    fast = np.exp(2j * np.pi * np.outer(n, r / cfg.max_range))  # (n_adc, S)
    elem = np.exp(2j * np.pi * cfg.spacing * np.outer(sin_t, k))  # (S, n_elem)
    rk = fast @ (refl[:, None] * elem)  # (n_adc, n_elem)
    cube[:] = rk[:, None, :]
    return cube


def _window(n: int, kind: str) -> np.ndarray:
    return np.ones(n) if kind == "rect" else np.hanning(n)


def cube_to_polar(cube: np.ndarray, cfg: RadarArrayConfig) -> np.ndarray:
    """3D FFT magnitude summed over Doppler: ``(range_fft, angle_fft)`` map.

    Rows are range bins (bin i at ``i * range_res``); columns are angle bins
    uniform in ``u = sin(theta) / (2 spacing)`` with boresight at the center
    column ``angle_fft // 2``.  Magnitudes are divided by the cube size so a
    unit scatterer has unit peak.
    """
    n_adc, n_pulse, n_elem = cube.shape
    w = (
        _window(n_adc, cfg.window)[:, None, None]
        * _window(n_pulse, cfg.window)[None, :, None]
        * _window(n_elem, cfg.window)[None, None, :]
    )
    spec = np.fft.fftn(cube * w, s=(cfg.range_fft, n_pulse, cfg.angle_fft), axes=(0, 1, 2))
    spec = np.fft.fftshift(spec, axes=2)
    return np.abs(spec).sum(axis=1) / float(w.sum())


def angle_bin(sin_theta, cfg: RadarArrayConfig):
    """Fractional angle-bin index of a given sin(theta)."""
    return cfg.angle_fft // 2 + np.asarray(sin_theta) * cfg.spacing * cfg.angle_fft


def polar_to_cartesian(polar: np.ndarray, grid: ViewGrid, cfg: RadarArrayConfig) -> np.ndarray:
    """Bilinear resampling of a polar map onto the Cartesian view grid; zero outside the FOV."""
    ca, cb = grid.centers()
    A, B = np.meshgrid(ca, cb, indexing="ij")
    r = np.hypot(A, B)
    with np.errstate(invalid="ignore", divide="ignore"):
        sin_t = np.where(r > 0, A / r, 0.0)
    theta = np.degrees(np.arctan2(A, B))
    rows = r / cfg.range_res
    cols = angle_bin(sin_t, cfg)
    out = map_coordinates(polar, [rows.ravel(), cols.ravel()], order=1, mode="constant", cval=0.0)
    out = out.reshape(A.shape)
    out[np.abs(theta) > cfg.fov_deg / 2.0] = 0.0
    out[B <= 0] = 0.0
    return out


def render_view(scene, cfg: RadarArrayConfig, grid: ViewGrid, view: str) -> np.ndarray:
    polar = cube_to_polar(synthesize_cube(scene, cfg, view), cfg)
    return np.log1p(polar_to_cartesian(polar, grid, cfg))


def render_scene(
    scene: Sequence[Scatterer],
    cfg: RadarArrayConfig | None = None,
    M: int = 4,
    bounds: SceneBounds | None = None,
    shape=(256, 128),
) -> RadarFrameSet:
    """FFT-chain heatmaps for both views, stacked over M identical (static) frames."""
    if M < 1:
        raise ValueError("M must be >= 1")
    cfg = cfg or RadarArrayConfig()
    grids = view_grids(bounds or SceneBounds(), shape)
    maps = {v: render_view(scene, cfg, grids[v], v) for v in VIEWS}
    return RadarFrameSet(
        hor=np.repeat(maps["horizontal"][None], M, axis=0),
        ver=np.repeat(maps["vertical"][None], M, axis=0),
        grids=grids,
    )


def blob_view(scene: Sequence[Scatterer], grid: ViewGrid, view: str, sigma: float) -> np.ndarray:
    lateral, depth, refl = _view_coords(scene, view)
    ca, cb = grid.centers()
    out = np.zeros(grid.shape)
    for a, b, amp in zip(lateral, depth, refl):
        out += amp * np.exp(-((ca[:, None] - a) ** 2 + (cb[None, :] - b) ** 2) / (2.0 * sigma**2))
    return out


def blob_heatmap(
    scene: Sequence[Scatterer],
    out_shape=(256, 128),
    sigma: float = 0.1,
    M: int = 4,
    bounds: SceneBounds | None = None,
) -> RadarFrameSet:
    """Isotropic Gaussian bump (sigma in meters) per scatterer, amplitude = reflectivity."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    grids = view_grids(bounds or SceneBounds(), out_shape)
    maps = {v: blob_view(scene, grids[v], v, sigma) for v in VIEWS}
    return RadarFrameSet(
        hor=np.repeat(maps["horizontal"][None], M, axis=0),
        ver=np.repeat(maps["vertical"][None], M, axis=0),
        grids=grids,
    )


# --------------------------------------------------------------------------
# files


def write_heatmap(path, arr: np.ndarray) -> None:
    """RXH1 tensor file: magic, u32 rank, u32 dims, little-endian f32 row-major payload."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(HEATMAP_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_heatmap(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != HEATMAP_MAGIC:
        raise ValueError(f"{path}: not an RXH1 heatmap file")
    (rank,) = struct.unpack_from("<I", data, 4)
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    off = 8 + 4 * rank
    n = int(np.prod(dims)) if rank else 1
    if len(data) - off != 4 * n:
        raise ValueError(f"{path}: payload size does not match dims {dims}")
    return np.frombuffer(data, dtype="<f4", offset=off, count=n).reshape(dims).astype(float)
