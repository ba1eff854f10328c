"""Reliable background construction.

To keep unlabeled foreground out of training, the teacher runs with a very
low score threshold and no suppression, and every point inside any predicted
box is deleted.  Points inside the scene's instance-bank regions are cleared
as well, then each bank entry's stored points are re-inserted at their
stored pose — the bank always wins, so no banked point is ever lost.  The
result ("broken scene") carries the bank entries as its annotation list.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector import InferOptions
from .geometry import Box3D, in_any_box_mask
from .scene import Annotation, Scene

TAU_LOW_DEFAULT = 0.01
# predicted boxes grow slightly before deletion so localization noise cannot
# strand boundary points of a detected object in the "background"
MARGIN_DEFAULT = 0.1


@dataclass
class BrokenScene:
    scene: Scene
    removed_point_count: int
    refilled_point_count: int


def _enlarged(box: Box3D, margin: float) -> Box3D:
    if margin == 0.0:
        return box
    return Box3D(box.x, box.y, box.z, box.l + 2 * margin, box.w + 2 * margin,
                 box.h + 2 * margin, box.yaw)


def mine_background(
    detector,
    scene: Scene,
    bank_entries,
    seed: int,
    tau_low: float = TAU_LOW_DEFAULT,
    margin: float = MARGIN_DEFAULT,
    nms: bool = False,
) -> BrokenScene:
    """Delete all suspected foreground, then refill banked instances.

    `bank_entries` is the scene's entry list (possibly empty for unlabeled
    scenes).  Output point count = original - removed + refilled.
    """
    opts = InferOptions(score_threshold=tau_low, nms=nms)
    predicted = detector.infer(scene, opts, seed)

    kill_boxes = [_enlarged(d.box, margin) for d in predicted]
    kill_boxes.extend(e.box for e in bank_entries)
    remove_mask = in_any_box_mask(scene.points, kill_boxes)
    kept = scene.points[~remove_mask]

    refills = [e.points_at_pose() for e in bank_entries]
    refilled = int(sum(len(r) for r in refills))
    points = np.vstack([kept, *refills]) if refills else kept

    annotations = [
        Annotation(box=e.box, class_id=e.class_id, provenance=e.provenance)
        for e in bank_entries
    ]
    broken = Scene(scene.id, points, annotations, scene._latent)
    return BrokenScene(
        scene=broken,
        removed_point_count=int(remove_mask.sum()),
        refilled_point_count=refilled,
    )
