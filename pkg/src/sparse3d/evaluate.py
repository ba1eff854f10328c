"""Evaluation: average precision, difficulty buckets, pipeline quality metrics.

AP follows the usual protocol: detections sorted by descending score match
greedily against unused ground truth at a per-class 3D IoU threshold, the
precision envelope is interpolated as p(r) = max over r' >= r, and AP is 100
times the mean of that envelope over fixed recall positions (40-point grid
1/40..1, or the classic 11-point grid 0, 0.1..1).  Per-class thresholds
default to 0.7 for cars and 0.5 for pedestrians and cyclists.

Difficulty levels nest (each includes the previous), with camera-style gates
on 2D height / occlusion / truncation when that metadata exists and range
gates otherwise.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .bank import InstanceBank
from .background import BrokenScene
from .detector import Detection, InferOptions, STANDARD_OPTS
from .geometry import Box3D, in_any_box_mask, iou_3d
from .scene import Annotation, ClassId, CLASS_NAMES, LatentAccess, Scene
from .seeding import seed_material

_EVAL_ACCESS = LatentAccess("evaluation")

AP_IOU_THRESHOLDS: dict[ClassId, float] = {
    ClassId.CAR: 0.7,
    ClassId.PEDESTRIAN: 0.5,
    ClassId.CYCLIST: 0.5,
}

DIFFICULTIES = ("easy", "moderate", "hard")
IGNORED = "ignored"

# camera-style gates: min 2D box height, max occlusion, max truncation
_META_GATES = ((40.0, 0, 0.15), (25.0, 1, 0.30), (25.0, 2, 0.50))
# range gates for synthetic data without camera metadata
_RANGE_GATES = (20.0, 40.0, float("inf"))


def difficulty_bucket(ann: Annotation) -> str:
    if ann.meta is not None:
        for level, (min_h, max_occ, max_trunc) in zip(DIFFICULTIES, _META_GATES):
            if (
                ann.meta.bbox2d_height >= min_h
                and ann.meta.occlusion <= max_occ
                and ann.meta.truncation <= max_trunc
            ):
                return level
        return IGNORED
    r = math.hypot(ann.box.x, ann.box.y)
    for level, max_r in zip(DIFFICULTIES, _RANGE_GATES):
        if r <= max_r:
            return level
    return IGNORED  # pragma: no cover - the hard range gate is unbounded


def recall_positions(n: int) -> np.ndarray:
    if n == 40:
        return np.arange(1, 41, dtype=np.float64) / 40.0
    if n == 11:
        return np.arange(0, 11, dtype=np.float64) / 10.0
    raise ValueError("recall grid must have 11 or 40 positions")


def _greedy_match(
    detections: list[Detection], gt_boxes: list[Box3D], iou_threshold: float
) -> list[tuple[float, bool]]:
    """(score, is_tp) per detection, matching strongest-first, each GT once."""
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    used = [False] * len(gt_boxes)
    outcomes = []
    for i in order:
        det = detections[i]
        best_j, best_iou = -1, iou_threshold
        for j, gt in enumerate(gt_boxes):
            if used[j]:
                continue
            if abs(gt.x - det.box.x) > 10.0 or abs(gt.y - det.box.y) > 10.0:
                continue
            iou = iou_3d(det.box, gt)
            if iou >= best_iou:
                best_j, best_iou = j, iou
        if best_j >= 0:
            used[best_j] = True
            outcomes.append((det.score, True))
        else:
            outcomes.append((det.score, False))
    return outcomes


def _ap_from_outcomes(
    outcomes: list[tuple[float, bool]], n_gt: int, positions: int
) -> float | None:
    if n_gt == 0:
        return None
    ranked = sorted(range(len(outcomes)), key=lambda i: (-outcomes[i][0], i))
    tp = np.array([1.0 if outcomes[i][1] else 0.0 for i in ranked])
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    recall = tp_cum / n_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1e-12)
    grid = recall_positions(positions)
    interp = np.zeros_like(grid)
    for gi, r in enumerate(grid):
        mask = recall >= r - 1e-12
        interp[gi] = float(precision[mask].max()) if mask.any() else 0.0
    return float(100.0 * interp.mean())


def compute_ap(
    detections: list[Detection],
    gt_boxes: list[Box3D],
    iou_threshold: float,
    positions: int = 40,
) -> float | None:
    """AP for one class in one collection; None marks "no ground truth"."""
    if not gt_boxes:
        return None
    return _ap_from_outcomes(_greedy_match(detections, gt_boxes, iou_threshold), len(gt_boxes), positions)


def _latent_of(scene: Scene) -> list[Annotation]:
    return scene.latent(_EVAL_ACCESS)


def seed_offset(seed: int, scene_id: str) -> int:
    return (seed * 31 + sum(seed_material(scene_id))) % (2**31 - 1)


def evaluate_detector(
    detector,
    scenes: list[Scene],
    seed: int,
    positions: int = 40,
    opts: InferOptions = STANDARD_OPTS,
    iou_thresholds: dict[ClassId, float] = AP_IOU_THRESHOLDS,
) -> dict[ClassId, dict[str, float | None]]:
    """Per-class, per-difficulty AP over latent-truth scenes.

    Inference runs once per scene; matching stays within a scene and outcomes
    pool across the set.  Difficulty sets nest ("moderate" evaluates against
    easy+moderate ground truth, "hard" against everything not ignored).
    """
    inferred = {s.id: detector.infer(s, opts, seed_offset(seed, s.id)) for s in scenes}
    results: dict[ClassId, dict[str, float | None]] = {c: {} for c in ClassId}
    for cls in ClassId:
        for level_idx, level in enumerate(DIFFICULTIES):
            allowed = set(DIFFICULTIES[: level_idx + 1])
            outcomes: list[tuple[float, bool]] = []
            n_gt = 0
            for scene in scenes:
                dets = [d for d in inferred[scene.id] if d.class_id == cls]
                gts = [
                    a.box
                    for a in _latent_of(scene)
                    if a.class_id == cls and difficulty_bucket(a) in allowed
                ]
                n_gt += len(gts)
                outcomes.extend(_greedy_match(dets, gts, iou_thresholds[cls]))
            results[cls][level] = _ap_from_outcomes(outcomes, n_gt, positions)
    return results


def mean_ap(per_class: dict[ClassId, dict[str, float | None]], level: str = "hard") -> float | None:
    vals = [v[level] for v in per_class.values() if v.get(level) is not None]
    return float(np.mean(vals)) if vals else None


def pooled_ap(
    dets_by_scene: dict[str, list[Detection]],
    gts_by_scene: dict[str, list[tuple[Box3D, ClassId]]],
    positions: int = 40,
    iou_thresholds: dict[ClassId, float] = AP_IOU_THRESHOLDS,
) -> dict[ClassId, float | None]:
    """Per-class AP over pre-computed detections; matching stays per scene."""
    results: dict[ClassId, float | None] = {}
    scene_ids = sorted(set(dets_by_scene) | set(gts_by_scene))
    for cls in ClassId:
        outcomes: list[tuple[float, bool]] = []
        n_gt = 0
        for sid in scene_ids:
            dets = [d for d in dets_by_scene.get(sid, []) if d.class_id == cls]
            gts = [b for b, c in gts_by_scene.get(sid, []) if c == cls]
            n_gt += len(gts)
            outcomes.extend(_greedy_match(dets, gts, iou_thresholds[cls]))
        results[cls] = _ap_from_outcomes(outcomes, n_gt, positions)
    return results


# --- pipeline quality metrics --------------------------------------------------


@dataclass
class MiningQuality:
    precision: dict[ClassId, float | None]
    coverage: dict[ClassId, float]
    aggregate_precision: float | None
    aggregate_coverage: float


def mining_quality(
    bank: InstanceBank,
    scenes: list[Scene],
    iou_thresholds: dict[ClassId, float] = AP_IOU_THRESHOLDS,
) -> MiningQuality:
    """Precision of mined entries and latent coverage of the whole bank.

    A pseudo entry is correct when it overlaps a same-class latent object of
    its scene at the class threshold; coverage is the fraction of latent
    objects claimed by any bank entry (human seeds included).
    """
    by_id = {s.id: s for s in scenes}
    correct = {c: 0 for c in ClassId}
    total = {c: 0 for c in ClassId}
    cov_num = {c: 0 for c in ClassId}
    cov_den = {c: 0 for c in ClassId}
    for sid in bank.scene_ids():
        scene = by_id.get(sid)
        if scene is None or not scene.has_latent:
            continue
        latent = _latent_of(scene)
        claimed = [False] * len(latent)
        for entry in bank.entries[sid]:
            thresh = iou_thresholds[entry.class_id]
            best_j, best_iou = -1, thresh
            for j, obj in enumerate(latent):
                if obj.class_id != entry.class_id or claimed[j]:
                    continue
                iou = iou_3d(entry.box, obj.box)
                if iou >= best_iou:
                    best_j, best_iou = j, iou
            if best_j >= 0:
                claimed[best_j] = True
            if entry.provenance.kind == "pseudo":
                total[entry.class_id] += 1
                if best_j >= 0:
                    correct[entry.class_id] += 1
        for j, obj in enumerate(latent):
            cov_den[obj.class_id] += 1
            if claimed[j]:
                cov_num[obj.class_id] += 1
    precision = {c: (correct[c] / total[c] if total[c] else None) for c in ClassId}
    coverage = {c: (cov_num[c] / cov_den[c] if cov_den[c] else 0.0) for c in ClassId}
    agg_p = (
        sum(correct.values()) / sum(total.values()) if sum(total.values()) else None
    )
    agg_c = sum(cov_num.values()) / sum(cov_den.values()) if sum(cov_den.values()) else 0.0
    return MiningQuality(
        precision=precision,
        coverage=coverage,
        aggregate_precision=agg_p,
        aggregate_coverage=agg_c,
    )


def background_removal_recall(broken: BrokenScene, scene: Scene) -> float:
    """Fraction of unbanked latent-object points deleted by background mining.

    Points of interest sit inside a latent box but outside every bank-entry
    box of the scene (the broken scene's annotations are exactly its bank
    entries).  Membership is checked by exact coordinate match: originals are
    float32-exact while refilled points went through float64 pose transforms,
    so the two populations cannot collide.
    """
    latent_boxes = [a.box for a in _latent_of(scene)]
    bank_boxes = [a.box for a in broken.scene.annotations]
    interest = in_any_box_mask(scene.points, latent_boxes)
    if bank_boxes:
        interest &= ~in_any_box_mask(scene.points, bank_boxes)
    n_interest = int(interest.sum())
    if n_interest == 0:
        return 1.0
    target = {row.tobytes() for row in np.ascontiguousarray(scene.points[interest])}
    survivors = np.ascontiguousarray(broken.scene.points)
    still_there = sum(1 for row in survivors if row.tobytes() in target)
    return 1.0 - still_there / n_interest


# --- reports -------------------------------------------------------------------


@dataclass
class EvalReport:
    round_index: int
    ap: dict[ClassId, dict[str, float | None]]
    mining_precision: dict[ClassId, float | None]
    mining_coverage: dict[ClassId, float]
    aggregate_precision: float | None
    aggregate_coverage: float
    mean_ap: float | None

    def to_json_dict(self) -> dict:
        return {
            "round": self.round_index,
            "ap": {
                CLASS_NAMES[c]: {lvl: self.ap[c][lvl] for lvl in DIFFICULTIES}
                for c in sorted(self.ap)
            },
            "mining_precision": {
                CLASS_NAMES[c]: self.mining_precision[c] for c in sorted(self.mining_precision)
            },
            "mining_coverage": {
                CLASS_NAMES[c]: self.mining_coverage[c] for c in sorted(self.mining_coverage)
            },
            "aggregate_precision": self.aggregate_precision,
            "aggregate_coverage": self.aggregate_coverage,
            "mean_ap": self.mean_ap,
        }


def report_to_csv_rows(reports: list[EvalReport]) -> list[dict]:
    rows = []
    for report in reports:
        for cls in sorted(report.ap):
            for level in DIFFICULTIES:
                rows.append(
                    {
                        "round": report.round_index,
                        "class": CLASS_NAMES[cls],
                        "difficulty": level,
                        "ap": report.ap[cls][level],
                        "mining_precision": report.mining_precision.get(cls),
                        "mining_coverage": report.mining_coverage.get(cls),
                    }
                )
    return rows


def write_csv_report(reports: list[EvalReport], path) -> None:
    rows = report_to_csv_rows(reports)
    fieldnames = ["round", "class", "difficulty", "ap", "mining_precision", "mining_coverage"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def write_json_report(reports: list[EvalReport], path) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_json_dict() for r in reports], fh, indent=2)
        fh.write("\n")
