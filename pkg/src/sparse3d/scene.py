"""Scene and annotation containers.

A scene is an immutable-by-convention bundle of a point cloud and its current
training annotations.  Simulated datasets additionally carry a hidden latent
object list used only by the detector simulator and the evaluation code;
reading it requires a `LatentAccess` token so pipeline logic cannot peek at
the answers.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .errors import CapabilityDenied, EmptyScene
from .geometry import AugParams, Box3D, augment_box, augment_points


class ClassId(IntEnum):
    CAR = 0
    PEDESTRIAN = 1
    CYCLIST = 2


CLASS_NAMES = {ClassId.CAR: "Car", ClassId.PEDESTRIAN: "Pedestrian", ClassId.CYCLIST: "Cyclist"}
NAME_TO_CLASS = {name: cid for cid, name in CLASS_NAMES.items()}

# nominal (l, w, h) per class, used as size priors by the synthesizer and
# for false-positive box shapes in the detector simulator
CLASS_SIZE_PRIORS: dict[ClassId, tuple[float, float, float]] = {
    ClassId.CAR: (4.0, 1.7, 1.6),
    ClassId.PEDESTRIAN: (0.8, 0.6, 1.7),
    ClassId.CYCLIST: (1.8, 0.6, 1.7),
}


@dataclass(frozen=True)
class Provenance:
    """Where an annotation came from: a human, or mining at a given round."""

    kind: str  # "human" | "pseudo"
    round_index: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("human", "pseudo"):
            raise ValueError(f"unknown provenance kind {self.kind!r}")
        if self.kind == "pseudo" and self.round_index < 2:
            raise ValueError("pseudo annotations can only appear from round 2 onward")
        if self.kind == "human" and self.round_index != 0:
            raise ValueError("human annotations carry round 0")

    @staticmethod
    def human() -> "Provenance":
        return Provenance("human", 0)

    @staticmethod
    def pseudo(round_index: int) -> "Provenance":
        return Provenance("pseudo", round_index)


@dataclass(frozen=True)
class AnnotationMeta:
    """Camera-derived attributes needed for difficulty bucketing."""

    truncation: float = 0.0
    occlusion: int = 0
    bbox2d_height: float = 0.0


@dataclass(frozen=True)
class Annotation:
    box: Box3D
    class_id: ClassId
    provenance: Provenance
    meta: AnnotationMeta | None = None
    # set on instances pasted from another scene; None means "this scene"
    source_scene_id: str | None = None


class LatentAccess:
    """Capability token gating reads of hidden ground truth.

    Only the detector simulator and the evaluation module construct these.
    """

    __slots__ = ("holder",)

    def __init__(self, holder: str):
        self.holder = holder

    def __repr__(self) -> str:  # pragma: no cover
        return f"LatentAccess({self.holder!r})"


@dataclass
class Scene:
    id: str
    points: np.ndarray  # (N, 4) float64: x, y, z, intensity
    annotations: list[Annotation] = field(default_factory=list)
    _latent: list[Annotation] | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"points must be (N, 4), got {pts.shape}")
        self.points = pts

    @property
    def has_latent(self) -> bool:
        return self._latent is not None

    def latent(self, access: LatentAccess) -> list[Annotation]:
        if not isinstance(access, LatentAccess):
            raise CapabilityDenied("latent ground truth requires a LatentAccess token")
        if self._latent is None:
            raise CapabilityDenied(f"scene {self.id} carries no latent ground truth")
        return self._latent

    def with_annotations(self, annotations: list[Annotation]) -> "Scene":
        return Scene(self.id, self.points, list(annotations), self._latent)

    def require_nonempty(self) -> None:
        if len(self.points) == 0:
            raise EmptyScene(f"scene {self.id} has no points")


def _augment_annotation(ann: Annotation, aug: AugParams, inverse: bool) -> Annotation:
    return replace(ann, box=augment_box(ann.box, aug, inverse=inverse))


def augment_scene(scene: Scene, aug: AugParams, inverse: bool = False) -> Scene:
    """Apply a global augmentation to points, annotations and latent truth."""
    latent = scene._latent
    return Scene(
        scene.id,
        augment_points(scene.points, aug, inverse=inverse),
        [_augment_annotation(a, aug, inverse) for a in scene.annotations],
        None if latent is None else [_augment_annotation(a, aug, inverse) for a in latent],
    )
