"""Synthetic person scenes: grounded boxes filled with point scatterers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box3D, CameraCalib, SceneBounds, default_calib, midplane_image_box
from .radarsim import RadarArrayConfig, RadarFrameSet, Scatterer, blob_heatmap, render_scene
from .structures import PERSON, Annotation


@dataclass(frozen=True)
class SceneSpec:
    """Sampling ranges for synthetic persons (meters)."""

    min_persons: int = 1
    max_persons: int = 3
    width: tuple = (0.4, 0.6)
    height: tuple = (1.5, 1.9)
    depth: tuple = (0.25, 0.4)
    x_range: tuple = (-2.0, 2.0)
    z_range: tuple = (1.5, 5.5)
    scatterers_per_person: int = 16
    reflectivity: tuple = (0.5, 1.0)
    min_gap: float = 0.3

    def __post_init__(self):
        if not 0 <= self.min_persons <= self.max_persons:
            raise ValueError("need 0 <= min_persons <= max_persons")
        for name in ("width", "height", "depth", "x_range", "z_range", "reflectivity"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} range is reversed")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.scatterers_per_person < 1:
            raise ValueError("scatterers_per_person must be >= 1")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, obj: dict) -> "SceneSpec":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in obj.items()})


@dataclass
class Scene:
    frame_id: int
    persons: list
    scatterers: list = field(default_factory=list)

    def annotations(self, calib: CameraCalib) -> list:
        return [Annotation(b, midplane_image_box(b, calib), PERSON, self.frame_id) for b in self.persons]


def _footprints_clear(box: np.ndarray, placed: list, gap: float) -> bool:
    for other in placed:
        dx = abs(box[0] - other[0]) - (box[3] + other[3]) / 2.0
        dz = abs(box[2] - other[2]) - (box[5] + other[5]) / 2.0
        if dx < gap and dz < gap:
            return False
    return True


def sample_scene(rng: np.random.Generator, frame_id: int = 0, spec: SceneSpec = SceneSpec()) -> Scene:
    """Draw non-overlapping standing persons and scatter points inside each box."""
    n = int(rng.integers(spec.min_persons, spec.max_persons + 1))
    placed = []
    for _ in range(n):
        for _attempt in range(100):
            w = rng.uniform(*spec.width)
            h = rng.uniform(*spec.height)
            d = rng.uniform(*spec.depth)
            cx = rng.uniform(*spec.x_range)
            cz = rng.uniform(*spec.z_range)
            box = np.array([cx, h / 2.0, cz, w, h, d])
            if _footprints_clear(box, placed, spec.min_gap):
                placed.append(box)
                break
    scat = []
    for box in placed:
        u = rng.uniform(-0.5, 0.5, size=(spec.scatterers_per_person, 3))
        pts = box[:3] + u * box[3:]
        amps = rng.uniform(*spec.reflectivity, size=spec.scatterers_per_person)
        scat.extend(Scatterer(tuple(p), float(a)) for p, a in zip(pts, amps))
    return Scene(frame_id, [Box3D.from_array(b) for b in placed], scat)


def make_suite(n_frames: int, seed: int, spec: SceneSpec = SceneSpec()) -> list:
    """``n_frames`` scenes; frame i uses its own stream so suites are prefix-stable."""
    return [sample_scene(np.random.default_rng([seed, i]), i, spec) for i in range(n_frames)]


def render(
    scene: Scene,
    renderer: str = "fft",
    M: int = 4,
    bounds: SceneBounds = SceneBounds(),
    shape=(256, 128),
    radar: RadarArrayConfig | None = None,
) -> RadarFrameSet:
    if renderer == "fft":
        return render_scene(scene.scatterers, radar, M=M, bounds=bounds, shape=shape)
    if renderer == "blob":
        return blob_heatmap(scene.scatterers, shape, M=M, bounds=bounds)
    raise ValueError(f"unknown renderer {renderer!r}")


__all__ = ["SceneSpec", "Scene", "sample_scene", "make_suite", "render", "default_calib"]
