"""Run configuration: JSON schema with strict key checking and line-numbered diagnostics."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

from .assignment import LossWeights
from .geometry import CameraCalib, SceneBounds, default_calib
from .pipeline import InferenceConfig
from .scenes import SceneSpec

DETECTOR_KINDS = ("oracle", "centroid")
RENDERERS = ("fft", "blob")


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists ``(line or None, field path, message)``."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.format_lines()))

    def format_lines(self) -> list:
        out = []
        for line, path, msg in self.problems:
            where = f"line {line}: " if line else ""
            out.append(f"{where}{path}: {msg}")
        return out


@dataclass(frozen=True)
class DetectorConfig:
    kind: str = "centroid"
    eta0: float = 0.0
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "eta0": self.eta0, "params": dict(self.params)}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    n_frames: int = 20
    renderer: str = "fft"
    M: int = 4
    heatmap_shape: tuple = (256, 128)
    N_train: int = 10
    train_t: int = 500
    histogram_bins: int = 20
    steps_sweep: tuple = (1, 5, 10)
    save_heatmaps: int = 2
    output_dir: str = "rexo_out"
    scene_spec: str | None = None
    scene: SceneSpec = SceneSpec()
    bounds: SceneBounds = SceneBounds()
    calib: CameraCalib = field(default_factory=default_calib)
    inference: InferenceConfig = InferenceConfig()
    detector: DetectorConfig = DetectorConfig()
    loss_weights: LossWeights = LossWeights()

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if hasattr(v, "to_dict"):
                v = v.to_dict()
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def with_overrides(self, **kw) -> "RunConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return RunConfig(**d)


_SECTIONS = {
    "scene": SceneSpec,
    "inference": InferenceConfig,
    "loss_weights": LossWeights,
}


def _key_line(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _known(cls) -> set:
    return {f.name for f in fields(cls)}


def _tupled(d: dict) -> dict:
    return {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([(exc.lineno, source, f"invalid JSON: {exc.msg}")]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([(1, source, "top level must be a JSON object")])

    problems = []
    top = _known(RunConfig)
    for k in raw:
        if k not in top:
            problems.append((_key_line(text, k), k, "unknown key"))
    nested = {
        "scene": _known(SceneSpec),
        "inference": _known(InferenceConfig),
        "loss_weights": _known(LossWeights),
        "bounds": _known(SceneBounds),
        "calib": _known(CameraCalib),
        "detector": _known(DetectorConfig),
    }
    for sec, keys in nested.items():
        if sec in raw:
            if not isinstance(raw[sec], dict):
                problems.append((_key_line(text, sec), sec, "must be an object"))
                continue
            for k in raw[sec]:
                if k not in keys:
                    problems.append((_key_line(text, k), f"{sec}.{k}", "unknown key"))
    if problems:
        raise ConfigError(problems)

    kw = {}
    for k, v in raw.items():
        if k in nested:
            continue
        kw[k] = tuple(v) if isinstance(v, list) else v
    builders = dict(_SECTIONS)
    builders.update(bounds=SceneBounds.from_dict, calib=CameraCalib.from_dict, detector=DetectorConfig)
    for sec, build in builders.items():
        if sec not in raw:
            continue
        try:
            kw[sec] = build(raw[sec]) if sec in ("bounds", "calib") else build(**_tupled(raw[sec]))
        except (TypeError, ValueError, KeyError) as exc:
            problems.append((_key_line(text, sec), sec, str(exc)))
    if problems:
        raise ConfigError(problems)
    try:
        cfg = RunConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError([(None, source, str(exc))]) from exc
    try:
        validate(cfg, text)
    except TypeError as exc:
        raise ConfigError([(None, source, f"wrong value type: {exc}")]) from exc
    return cfg


def validate(cfg: RunConfig, text: str = "") -> None:
    problems = []

    def bad(path, msg):
        problems.append((_key_line(text, path.split(".")[-1]) if text else None, path, msg))

    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        bad("seed", "must be a non-negative integer")
    if not isinstance(cfg.n_frames, int) or cfg.n_frames < 1:
        bad("n_frames", "must be a positive integer")
    if cfg.renderer not in RENDERERS:
        bad("renderer", f"must be one of {RENDERERS}")
    if not isinstance(cfg.M, int) or cfg.M < 1:
        bad("M", "must be a positive integer")
    if len(cfg.heatmap_shape) != 2 or min(cfg.heatmap_shape) < 8:
        bad("heatmap_shape", "must be two sizes >= 8")
    if cfg.N_train < cfg.scene.max_persons:
        bad("N_train", "must be at least scene.max_persons")
    if not 0 <= cfg.train_t <= cfg.inference.T:
        bad("train_t", "must lie in [0, inference.T]")
    if cfg.histogram_bins < 1:
        bad("histogram_bins", "must be >= 1")
    if any((not isinstance(s, int)) or s < 1 or s > cfg.inference.T for s in cfg.steps_sweep):
        bad("steps_sweep", "entries must be integers in [1, inference.T]")
    if cfg.scene_spec is not None and not isinstance(cfg.scene_spec, str):
        bad("scene_spec", "must be a path string or null")
    if cfg.save_heatmaps < 0:
        bad("save_heatmaps", "must be >= 0")
    if cfg.detector.kind not in DETECTOR_KINDS:
        bad("detector.kind", f"must be one of {DETECTOR_KINDS}")
    if not 0.0 <= cfg.detector.eta0 < 0.5:
        bad("detector.eta0", "must lie in [0, 0.5)")
    if cfg.detector.kind == "centroid":
        from .detectors import CentroidDetector

        unknown = set(cfg.detector.params) - _known(CentroidDetector)
        for k in sorted(unknown):
            bad(f"detector.params.{k}", "unknown key")
    elif cfg.detector.params:
        bad("detector.params", "the oracle detector takes no params")
    if problems:
        raise ConfigError(problems)


def load_scene_spec(path) -> SceneSpec:
    """A standalone scene-spec JSON file, with the same strict key checking."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([(None, str(path), f"cannot read scene spec: {exc.strerror}")]) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([(exc.lineno, str(path), f"invalid JSON: {exc.msg}")]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([(1, str(path), "scene spec must be a JSON object")])
    extra = [(_key_line(text, k), f"scene_spec.{k}", "unknown key") for k in raw if k not in _known(SceneSpec)]
    if extra:
        raise ConfigError(extra)
    try:
        return SceneSpec.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError([(None, str(path), str(exc))]) from exc


def load_config(path) -> RunConfig:
    """Read and validate a config file; a ``scene_spec`` path is resolved next to it."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([(None, str(path), f"cannot read config: {exc.strerror}")]) from exc
    cfg = parse_config(text, str(path))
    if cfg.scene_spec is not None:
        if json.loads(text).get("scene") is not None:
            raise ConfigError([(_key_line(text, "scene_spec"), "scene_spec", "give either scene or scene_spec, not both")])
        sp = Path(cfg.scene_spec)
        if not sp.is_absolute():
            sp = p.parent / sp
        cfg = cfg.with_overrides(scene=load_scene_spec(sp))
        validate(cfg, text)
    return cfg
