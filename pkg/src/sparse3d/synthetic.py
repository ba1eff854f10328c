"""Synthetic scene generation, label sparsification, annotation perturbation.

Scenes are built on a flat ground patch: objects drawn from per-class size
priors sit at z = h/2, their point counts fall off with range following an
inverse-square density model, ground and clutter points fill the background.
Coordinates are quantized to float32 on creation so the native file format
round-trips losslessly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid, EmptyScene
from .geometry import Box3D, iou_3d, rotated_bev_iou, wrap_angle
from .scene import Annotation, CLASS_SIZE_PRIORS, ClassId, Provenance, Scene
from .seeding import derive_rng


@dataclass(frozen=True)
class SynthConfig:
    n_scenes: int = 300
    objects_min: int = 4
    objects_max: int = 8
    class_mix: tuple[float, float, float] = (0.5, 0.25, 0.25)  # Car, Pedestrian, Cyclist
    range_min: float = 4.0
    range_max: float = 35.0
    # points on an object at `density_ref_range` meters; falls off as 1/r^2
    density_ref_points: int = 600
    density_ref_range: float = 10.0
    min_object_points: int = 8
    max_object_points: int = 1200
    size_jitter: float = 0.1
    ground_points: int = 1600
    ground_extent: float = 40.0
    clutter_clusters: int = 12
    clutter_points_per_cluster: int = 15

    def validate(self) -> None:
        if self.n_scenes <= 0:
            raise ConfigInvalid("n_scenes must be positive")
        if not (0 < self.objects_min <= self.objects_max):
            raise ConfigInvalid("need 0 < objects_min <= objects_max")
        if abs(sum(self.class_mix) - 1.0) > 1e-9 or any(p < 0 for p in self.class_mix):
            raise ConfigInvalid("class_mix must be a probability vector")
        if not (0 < self.range_min < self.range_max):
            raise ConfigInvalid("need 0 < range_min < range_max")
        if self.density_ref_points <= 0 or self.density_ref_range <= 0:
            raise ConfigInvalid("density model parameters must be positive")


def object_point_budget(cfg: SynthConfig, rng_range: float) -> int:
    """Deterministic in-box point count for an object at the given range."""
    r = max(rng_range, 1.0)
    n = int(round(cfg.density_ref_points * (cfg.density_ref_range / r) ** 2))
    return max(cfg.min_object_points, min(cfg.max_object_points, n))


def _f32(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32).astype(np.float64)


def _sample_object_box(cfg: SynthConfig, cls: ClassId, rng: np.random.Generator) -> Box3D:
    l0, w0, h0 = CLASS_SIZE_PRIORS[cls]
    jit = cfg.size_jitter
    l = l0 * rng.uniform(1 - jit, 1 + jit)
    w = w0 * rng.uniform(1 - jit, 1 + jit)
    h = h0 * rng.uniform(1 - jit, 1 + jit)
    r = rng.uniform(cfg.range_min, cfg.range_max)
    theta = rng.uniform(-math.pi, math.pi)
    yaw = wrap_angle(rng.uniform(-math.pi, math.pi))
    return Box3D(r * math.cos(theta), r * math.sin(theta), h / 2.0, l, w, h, yaw)


def _points_in_box_volume(box: Box3D, n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.uniform(-box.l / 2, box.l / 2, n)
    v = rng.uniform(-box.w / 2, box.w / 2, n)
    t = rng.uniform(-box.h / 2, box.h / 2, n)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    x = box.x + c * u - s * v
    y = box.y + s * u + c * v
    z = box.z + t
    intensity = rng.uniform(0.0, 1.0, n)
    return np.column_stack([x, y, z, intensity])


def _synthesize_scene(cfg: SynthConfig, scene_id: str, rng: np.random.Generator) -> Scene:
    n_objects = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
    boxes: list[Box3D] = []
    classes: list[ClassId] = []
    attempts = 0
    while len(boxes) < n_objects and attempts < 200 * n_objects:
        attempts += 1
        cls = ClassId(int(rng.choice(3, p=np.asarray(cfg.class_mix))))
        box = _sample_object_box(cfg, cls, rng)
        if all(rotated_bev_iou(box, other) == 0.0 for other in boxes):
            boxes.append(box)
            classes.append(cls)

    chunks = []
    for box in boxes:
        budget = object_point_budget(cfg, math.hypot(box.x, box.y))
        chunks.append(_points_in_box_volume(box, budget, rng))

    g = cfg.ground_extent
    gx = rng.uniform(-g, g, cfg.ground_points)
    gy = rng.uniform(-g, g, cfg.ground_points)
    gz = rng.uniform(-0.08, -0.02, cfg.ground_points)
    chunks.append(np.column_stack([gx, gy, gz, rng.uniform(0, 1, cfg.ground_points)]))

    for _ in range(cfg.clutter_clusters):
        for _ in range(40):
            cx, cy = rng.uniform(-g, g, 2)
            probe = Box3D(cx, cy, 0.75, 1.0, 1.0, 1.5, 0.0)
            if all(rotated_bev_iou(probe, b) == 0.0 for b in boxes):
                n = cfg.clutter_points_per_cluster
                px = cx + rng.normal(0, 0.3, n)
                py = cy + rng.normal(0, 0.3, n)
                pz = rng.uniform(0.0, 1.5, n)
                chunks.append(np.column_stack([px, py, pz, rng.uniform(0, 1, n)]))
                break

    points = _f32(np.vstack(chunks))
    latent = [
        Annotation(box=b, class_id=c, provenance=Provenance.human())
        for b, c in zip(boxes, classes)
    ]
    return Scene(id=scene_id, points=points, annotations=list(latent), _latent=latent)


def synthesize_dataset(cfg: SynthConfig, seed: int, id_prefix: str = "synth") -> list[Scene]:
    """Fully annotated synthetic dataset; `annotations` mirrors the latent list."""
    cfg.validate()
    return [
        _synthesize_scene(cfg, f"{id_prefix}-{i:05d}", derive_rng(seed, id_prefix, i))
        for i in range(cfg.n_scenes)
    ]


# --- sparsification ---------------------------------------------------------

_STRATEGIES = ("random", "easy", "hard")


def _range_of(ann: Annotation) -> float:
    return math.hypot(ann.box.x, ann.box.y)


def _truncation_of(ann: Annotation) -> float:
    return ann.meta.truncation if ann.meta is not None else 0.0


def sparsify(scenes, strategy: str = "random", keep_n: int = 1, seed: int = 0) -> list[Scene]:
    """Keep `keep_n` annotations per scene; the rest survive only as latent truth.

    Strategies: `random` picks uniformly; `easy` prefers close, untruncated
    objects; `hard` prefers remote, truncated ones.
    """
    if strategy not in _STRATEGIES:
        raise ConfigInvalid(f"unknown sparsify strategy {strategy!r}")
    if keep_n < 1:
        raise ConfigInvalid("keep_n must be >= 1")
    out = []
    for scene in scenes:
        pool = list(scene.annotations)
        if not pool:
            raise EmptyScene(f"scene {scene.id} has no annotations to sparsify")
        k = min(keep_n, len(pool))
        if strategy == "random":
            rng = derive_rng(seed, "sparsify", scene.id)
            idx = rng.choice(len(pool), size=k, replace=False)
            keep = [pool[i] for i in sorted(int(i) for i in idx)]
        elif strategy == "easy":
            keep = sorted(pool, key=lambda a: (_range_of(a), _truncation_of(a)))[:k]
        else:
            keep = sorted(pool, key=lambda a: (-_range_of(a), -_truncation_of(a)))[:k]
        latent = scene._latent if scene._latent is not None else list(scene.annotations)
        out.append(Scene(scene.id, scene.points, keep, list(latent)))
    return out


# --- annotation perturbation -------------------------------------------------


def _jitter_box(box: Box3D, rng: np.random.Generator, widen: float) -> Box3D:
    dx = rng.uniform(-0.35, 0.35) * box.l * widen
    dy = rng.uniform(-0.35, 0.35) * box.w * widen
    dz = rng.uniform(-0.2, 0.2) * box.h * widen
    sl, sw, sh = rng.uniform(0.85, 1.15, 3) ** widen
    dyaw = rng.uniform(-0.25, 0.25) * widen
    return Box3D(
        box.x + dx, box.y + dy, box.z + dz,
        box.l * sl, box.w * sw, box.h * sh,
        wrap_angle(box.yaw + dyaw),
    )


def perturb_annotations(
    scenes,
    ratio: float,
    iou_range: tuple[float, float] = (0.45, 0.55),
    seed: int = 0,
) -> list[Scene]:
    """Degrade a fraction of annotations to a controlled overlap band.

    A `ratio` share of all annotations (pooled over the dataset, chosen
    uniformly) is re-drawn until its 3D IoU with the original box lands in
    `iou_range`.  Rejection widens its jitter every 200 draws, so it always
    terminates.  Class and provenance are untouched.
    """
    if not (0.0 <= ratio <= 1.0):
        raise ConfigInvalid("ratio must lie in [0, 1]")
    lo, hi = iou_range
    if not (0.0 < lo < hi < 1.0):
        raise ConfigInvalid("iou_range must satisfy 0 < lo < hi < 1")

    slots = [(si, ai) for si, scene in enumerate(scenes) for ai in range(len(scene.annotations))]
    rng = derive_rng(seed, "perturb")
    n_pick = int(round(ratio * len(slots)))
    picked = set()
    if n_pick:
        chosen = rng.choice(len(slots), size=n_pick, replace=False)
        picked = {slots[int(i)] for i in chosen}

    out = []
    for si, scene in enumerate(scenes):
        annotations = []
        for ai, ann in enumerate(scene.annotations):
            if (si, ai) not in picked:
                annotations.append(ann)
                continue
            jrng = derive_rng(seed, "perturb", scene.id, ai)
            widen = 1.0
            attempt = 0
            while True:
                attempt += 1
                cand = _jitter_box(ann.box, jrng, widen)
                if lo <= iou_3d(cand, ann.box) <= hi:
                    break
                if attempt % 200 == 0:
                    widen *= 1.3
            annotations.append(
                Annotation(cand, ann.class_id, ann.provenance, ann.meta, ann.source_scene_id)
            )
        out.append(Scene(scene.id, scene.points, annotations, scene._latent))
    return out
