"""Detection and annotation records shared by the pipeline, matcher and metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box3D, ImageBox2D

PERSON = 0
BACKGROUND = 1
CLASS_NAMES = ("person", "background")


@dataclass(frozen=True)
class Detection:
    box3d: Box3D
    box2d: ImageBox2D
    scores: tuple  # (p_person, p_background)
    frame_id: int = 0

    def __post_init__(self):
        s = tuple(float(v) for v in self.scores)
        if len(s) != 2 or min(s) < 0 or abs(sum(s) - 1.0) > 1e-9:
            raise ValueError(f"scores must be a 2-class probability vector, got {self.scores}")
        object.__setattr__(self, "scores", s)

    @property
    def score(self) -> float:
        return self.scores[PERSON]

    def to_dict(self) -> dict:
        return {
            "frame_id": int(self.frame_id),
            "box3d": self.box3d.to_dict(),
            "box2d": self.box2d.to_dict(),
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Detection":
        p = float(obj["score"])
        return cls(Box3D.from_dict(obj["box3d"]), ImageBox2D.from_dict(obj["box2d"]), (p, 1.0 - p), int(obj["frame_id"]))


@dataclass(frozen=True)
class Annotation:
    box3d: Box3D
    box2d: ImageBox2D
    class_id: int = PERSON
    frame_id: int = 0

    def to_dict(self) -> dict:
        return {
            "frame_id": int(self.frame_id),
            "box3d": self.box3d.to_dict(),
            "box2d": self.box2d.to_dict(),
            "class": CLASS_NAMES[self.class_id],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Annotation":
        return cls(
            Box3D.from_dict(obj["box3d"]),
            ImageBox2D.from_dict(obj["box2d"]),
            CLASS_NAMES.index(obj.get("class", "person")),
            int(obj["frame_id"]),
        )


def boxes3d(items) -> np.ndarray:
    return np.array([it.box3d.as_array() for it in items], dtype=float).reshape(-1, 6)
