"""Confident-instance mining.

Each round, the teacher runs on every scene twice — once raw, once under a
random global augmentation — and each raw detection becomes a candidate
scored on three axes:

  * classification loss  -ln(max(score, 1e-7))
  * consistency loss     1 - IoU3D against the matched augmented detection
                          mapped back through the inverse augmentation
                          (1.0 when nothing matched)
  * density              in-box point count on the raw scene

A candidate is mined when cls_loss < lambda_u AND cons_loss < lambda_v AND
density >= lambda_k.  The first two thresholds come from a histogram
breakpoint over the round's pooled per-class loss values; the third follows
a linear curriculum from the round-zero median density down to a floor.
Mined boxes that overlap existing annotations or instance-bank entries
(BEV IoU > dedup threshold) are dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detector import Detection, InferOptions, STANDARD_OPTS
from .errors import EmptyInput
from .geometry import rotated_bev_iou, iou_3d, in_box_mask, augment_box, sample_augmentation
from .scene import Annotation, ClassId, Provenance, Scene, augment_scene
from .seeding import derive_rng

CLS_SCORE_FLOOR = 1e-7
MATCH_IOU_MIN = 0.1
DEDUP_IOU = 0.3
UNMATCHED_CONS_LOSS = 1.0


def cls_loss_of(score: float) -> float:
    return -math.log(max(score, CLS_SCORE_FLOOR))


@dataclass(frozen=True)
class Candidate:
    scene_id: str
    detection: Detection
    cls_loss: float
    cons_loss: float
    density: int

    @property
    def class_id(self) -> ClassId:
        return self.detection.class_id


@dataclass
class CurriculumState:
    """Linear density schedule: start at the observed round-zero level and
    descend to the floor over the first `t_down` rounds."""

    d0: dict[ClassId, float]
    d_min: dict[ClassId, float]
    t_down: int
    t: int = 0


def density_lambda(cs: CurriculumState, cls: ClassId) -> float:
    d0 = cs.d0[cls]
    d_min = cs.d_min[cls]
    if cs.t_down <= 0:
        return d_min
    return max(d_min, d0 - (d0 - d_min) * cs.t / cs.t_down)


def init_density(
    detector, scenes: list[Scene], seed: int,
    d_min: dict[ClassId, float], t_down: int,
    d0_fallback: float = 60.0, opts: InferOptions = STANDARD_OPTS,
    quantile: float = 50.0,
) -> CurriculumState:
    """Anchor the schedule at the median round-zero in-box point count.

    Round-zero detections skew toward dense, nearby objects; the long upper
    tail would drag a plain average so high that the first mining rounds
    starve.  The median rejects sparse remote clutter while admitting
    typical instances early; `quantile` stays configurable for stricter or
    looser starts.
    """
    counts: dict[ClassId, list[int]] = {c: [] for c in ClassId}
    for scene in scenes:
        for det in detector.infer(scene, opts, seed):
            counts[det.class_id].append(int(in_box_mask(scene.points, det.box).sum()))
    d0 = {
        cls: float(np.percentile(vals, quantile)) if vals else d0_fallback
        for cls, vals in counts.items()
    }
    return CurriculumState(d0=d0, d_min=dict(d_min), t_down=t_down, t=0)


def histogram_breakpoint(values, bins: int = 20, min_values: int = 50) -> float:
    """Threshold at the steepest descent of an equal-width histogram.

    Builds `bins` equal-width cells over [min, max], finds the index i
    maximizing h[i] - h[i+1] (ties to the smallest i) and returns the right
    edge of cell i.  Degenerate inputs — fewer than `min_values` samples, a
    flat range, or no descending step — fall back to the 70th percentile.
    """
    vals = np.asarray(list(values), dtype=np.float64)
    if vals.size == 0:
        raise EmptyInput("histogram_breakpoint needs at least one value")
    fallback = float(np.percentile(vals, 70))
    if vals.size < min_values or float(vals.min()) == float(vals.max()):
        return fallback
    hist, edges = np.histogram(vals, bins=bins, range=(float(vals.min()), float(vals.max())))
    drops = hist[:-1] - hist[1:]
    if drops.size == 0 or drops.max() <= 0:
        return fallback
    i = int(np.argmax(drops))  # argmax already takes the smallest tie index
    return float(edges[i + 1])


def match_candidates(
    raw: list[Detection],
    mapped_aug: list[Detection],
    iou_min: float = MATCH_IOU_MIN,
) -> dict[int, int]:
    """Greedy one-to-one matching by descending BEV IoU within each class."""
    pairs = []
    for i, d in enumerate(raw):
        for j, a in enumerate(mapped_aug):
            if d.class_id != a.class_id:
                continue
            iou = rotated_bev_iou(d.box, a.box)
            if iou >= iou_min:
                pairs.append((iou, i, j))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    matched: dict[int, int] = {}
    used_j: set[int] = set()
    for _, i, j in pairs:
        if i in matched or j in used_j:
            continue
        matched[i] = j
        used_j.add(j)
    return matched


def build_candidates(
    detector, scene: Scene, seed: int, opts: InferOptions = STANDARD_OPTS
) -> list[Candidate]:
    """Run the teacher on the raw and augmented scene; score every raw detection."""
    aug = sample_augmentation(derive_rng(seed, scene.id, "mining-aug"))
    raw = detector.infer(scene, opts, seed)
    aug_dets = detector.infer(augment_scene(scene, aug), opts, derive_seed_int(seed))
    mapped = [
        Detection(augment_box(d.box, aug, inverse=True), d.class_id, d.score)
        for d in aug_dets
    ]
    matched = match_candidates(raw, mapped)
    out = []
    for i, det in enumerate(raw):
        if i in matched:
            cons = 1.0 - iou_3d(det.box, mapped[matched[i]].box)
        else:
            cons = UNMATCHED_CONS_LOSS
        density = int(in_box_mask(scene.points, det.box).sum())
        out.append(
            Candidate(
                scene_id=scene.id,
                detection=det,
                cls_loss=cls_loss_of(det.score),
                cons_loss=cons,
                density=density,
            )
        )
    return out


def derive_seed_int(seed: int) -> int:
    # distinct deterministic stream for the augmented pass
    return (seed * 2654435761 + 97) % (2**31 - 1)


def pooled_thresholds(
    candidates: list[Candidate], bins: int = 20
) -> dict[ClassId, tuple[float, float]]:
    """Per-class (lambda_u, lambda_v) from the round's pooled loss histograms."""
    out: dict[ClassId, tuple[float, float]] = {}
    for cls in ClassId:
        group = [c for c in candidates if c.class_id == cls]
        if not group:
            continue
        lam_u = histogram_breakpoint([c.cls_loss for c in group], bins=bins)
        lam_v = histogram_breakpoint([c.cons_loss for c in group], bins=bins)
        out[cls] = (lam_u, lam_v)
    return out


def select_and_mine(
    scene: Scene,
    candidates: list[Candidate],
    thresholds: dict[ClassId, tuple[float, float]],
    cs: CurriculumState,
    bank_boxes: list,
    round_index: int,
    dedup_iou: float = DEDUP_IOU,
) -> list[Annotation]:
    """Apply the three-criterion conjunction, then drop overlaps.

    `bank_boxes` holds the scene's existing bank-entry boxes; the scene's own
    annotations and already-accepted picks also participate in dedup.
    """
    selected = []
    for cand in candidates:
        if cand.scene_id != scene.id or cand.class_id not in thresholds:
            continue
        lam_u, lam_v = thresholds[cand.class_id]
        lam_k = density_lambda(cs, cand.class_id)
        if cand.cls_loss < lam_u and cand.cons_loss < lam_v and cand.density >= lam_k:
            selected.append(cand)
    selected.sort(key=lambda c: -c.detection.score)

    blockers = list(bank_boxes) + [a.box for a in scene.annotations]
    mined: list[Annotation] = []
    for cand in selected:
        box = cand.detection.box
        if any(rotated_bev_iou(box, b) > dedup_iou for b in blockers):
            continue
        mined.append(
            Annotation(box=box, class_id=cand.class_id, provenance=Provenance.pseudo(round_index))
        )
        blockers.append(box)
    return mined
