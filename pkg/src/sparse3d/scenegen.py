"""Confident fully-annotated scene generation.

A broken scene (reliable background + its own banked instances) is topped up
with instances sampled uniformly from the rest of the bank.  A sample is
placed at its stored pose only when its box is completely disjoint in BEV
from every box already in the scene; a colliding sample is skipped, never
relocated.  Background points under a placed box are removed before the
instance points go in.  Pasted annotations remember their source scene.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .background import BrokenScene
from .bank import BankEntry, InstanceBank
from .geometry import rotated_bev_iou, in_box_mask
from .scene import ClassId, Scene

DEFAULT_PLACEMENT_TARGETS: dict[ClassId, int] = {
    ClassId.CAR: 15,
    ClassId.PEDESTRIAN: 10,
    ClassId.CYCLIST: 10,
}


def generate_confident_scene(
    broken: BrokenScene,
    bank: InstanceBank,
    targets: dict[ClassId, int],
    rng: np.random.Generator,
) -> Scene:
    base = broken.scene
    annotations = list(base.annotations)
    boxes = [a.box for a in annotations]
    placed: list[BankEntry] = []

    for cls in sorted(targets):
        have = sum(1 for a in annotations if a.class_id == cls)
        want = targets[cls]
        if have >= want:
            continue
        pool = [
            e
            for e in bank.all_entries()
            if e.class_id == cls and e.scene_id != base.id and len(e.points_local) > 0
        ]
        if not pool:
            continue
        order = rng.permutation(len(pool))
        for idx in order:
            if have >= want:
                break
            entry = pool[int(idx)]
            if any(rotated_bev_iou(entry.box, b) > 0.0 for b in boxes):
                continue  # collision: skip, never relocate
            placed.append(entry)
            boxes.append(entry.box)
            annotations.append(
                replace(entry.as_annotation(), source_scene_id=entry.scene_id)
            )
            have += 1

    points = base.points
    if placed:
        occupied = np.zeros(len(points), dtype=bool)
        for entry in placed:
            occupied |= in_box_mask(points, entry.box)
        points = np.vstack([points[~occupied], *[e.points_at_pose() for e in placed]])

    return Scene(base.id, points, annotations, base._latent)
