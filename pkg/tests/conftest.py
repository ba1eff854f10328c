"""Shared test helpers: random geometry, small scene builders."""
import math

import numpy as np

from sparse3d import Annotation, Box3D, ClassId, Provenance, Scene


def cluster_in_box(box: Box3D, count: int, seed: int) -> np.ndarray:
    """`count` points well inside `box` (80% of each extent), intensity 0.3."""
    rng = np.random.default_rng(seed)
    local = rng.uniform(-0.4, 0.4, (count, 3)) * np.array([box.l, box.w, box.h])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    return np.column_stack(
        [
            c * local[:, 0] - s * local[:, 1] + box.x,
            s * local[:, 0] + c * local[:, 1] + box.y,
            local[:, 2] + box.z,
            np.full(count, 0.3),
        ]
    )


def populated_scene(scene_id="pop0", seed=3, points_per_object=60, background=500):
    """One scene with a car, a pedestrian and a cyclist, each holding points.

    Returns (scene, latent annotations).  The scene carries no training
    annotations; background points stay near the ground plane, far from the
    object interiors only by chance, so object boxes are placed off-center.
    """
    boxes = [
        Box3D(8, 0, 0.8, 4, 1.7, 1.6, 0.0),
        Box3D(20, 6, 0.85, 0.8, 0.6, 1.7, 1.2),
        Box3D(-15, -10, 0.85, 1.8, 0.6, 1.7, -0.5),
    ]
    classes = [ClassId.CAR, ClassId.PEDESTRIAN, ClassId.CYCLIST]
    rng = np.random.default_rng(seed)
    chunks = []
    for b in boxes:
        local = rng.uniform(-0.4, 0.4, (points_per_object, 3)) * np.array([b.l, b.w, b.h])
        c, s = math.cos(b.yaw), math.sin(b.yaw)
        chunks.append(
            np.column_stack(
                [
                    c * local[:, 0] - s * local[:, 1] + b.x,
                    s * local[:, 0] + c * local[:, 1] + b.y,
                    local[:, 2] + b.z,
                    np.full(points_per_object, 0.4),
                ]
            )
        )
    chunks.append(
        np.column_stack(
            [rng.uniform(-40, 40, background), rng.uniform(-40, 40, background),
             rng.uniform(-0.2, 0.2, background), np.full(background, 0.1)]
        )
    )
    latent = [
        Annotation(box=b, class_id=c, provenance=Provenance.human())
        for b, c in zip(boxes, classes)
    ]
    return Scene(scene_id, np.vstack(chunks), [], latent), latent


def random_box(rng: np.random.Generator, spread: float = 20.0) -> Box3D:
    return Box3D(
        x=float(rng.uniform(-spread, spread)),
        y=float(rng.uniform(-spread, spread)),
        z=float(rng.uniform(-2.0, 2.0)),
        l=float(rng.uniform(0.5, 6.0)),
        w=float(rng.uniform(0.5, 6.0)),
        h=float(rng.uniform(0.5, 4.0)),
        yaw=float(rng.uniform(-math.pi, math.pi)),
    )


def nearby_box(rng: np.random.Generator, base: Box3D) -> Box3D:
    """A perturbation of `base` likely to overlap it partially."""
    return Box3D(
        x=base.x + float(rng.uniform(-2.0, 2.0)),
        y=base.y + float(rng.uniform(-2.0, 2.0)),
        z=base.z + float(rng.uniform(-1.0, 1.0)),
        l=max(0.3, base.l * float(rng.uniform(0.6, 1.4))),
        w=max(0.3, base.w * float(rng.uniform(0.6, 1.4))),
        h=max(0.3, base.h * float(rng.uniform(0.6, 1.4))),
        yaw=base.yaw + float(rng.uniform(-0.6, 0.6)),
    )


def box_pairs(n: int, seed: int) -> list[tuple[Box3D, Box3D]]:
    """Half near-overlapping pairs, half independent pairs."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        a = random_box(rng)
        b = nearby_box(rng, a) if i % 2 == 0 else random_box(rng)
        pairs.append((a, b))
    return pairs


def human_annotation(box: Box3D, class_id: ClassId = ClassId.CAR) -> Annotation:
    return Annotation(box=box, class_id=class_id, provenance=Provenance.human())


class FixedDetector:
    """Returns a canned detection list, honoring only the score threshold."""

    def __init__(self, detections):
        self.detections = detections

    def infer(self, scene, opts, seed):
        return [d for d in self.detections if d.score >= opts.score_threshold]


def tiny_scene(
    scene_id: str = "s0",
    n_points: int = 200,
    seed: int = 0,
    latent: list[Annotation] | None = None,
    annotations: list[Annotation] | None = None,
) -> Scene:
    rng = np.random.default_rng(seed)
    pts = np.column_stack(
        [
            rng.uniform(-30, 30, n_points),
            rng.uniform(-30, 30, n_points),
            rng.uniform(-2, 2, n_points),
            rng.uniform(0, 1, n_points),
        ]
    ).astype(np.float64)
    return Scene(scene_id, pts, list(annotations or []), latent)
