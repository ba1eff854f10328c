"""Mining: loss scoring, histogram thresholds, density curriculum, selection."""
import math

import numpy as np
import pytest

from conftest import FixedDetector, human_annotation, tiny_scene
from sparse3d import (
    Annotation,
    Box3D,
    Candidate,
    ClassId,
    CurriculumState,
    Detection,
    EmptyInput,
    LatentAccess,
    Provenance,
    bank_init,
    bank_insert,
    build_candidates,
    density_lambda,
    histogram_breakpoint,
    init_density,
    pooled_thresholds,
    rotated_bev_iou,
    select_and_mine,
)
from sparse3d.mining import cls_loss_of

CAR = ClassId.CAR
D_MIN = {c: 5.0 for c in ClassId}


# --- classification loss -------------------------------------------------------


def test_cls_loss_values():
    assert cls_loss_of(1.0) == 0.0
    assert cls_loss_of(0.9) == pytest.approx(-math.log(0.9), abs=1e-12)
    assert cls_loss_of(0.9) == pytest.approx(0.10536, abs=1e-5)
    assert cls_loss_of(0.0) == pytest.approx(-math.log(1e-7), abs=1e-12)


# --- histogram breakpoint --------------------------------------------------------


def test_bimodal_histogram_returns_inter_mode_edge():
    values = [0.05] * 300 + [0.95] * 50
    # bins=10 over [0.05, 0.95]: the first bin holds the low mode, so the
    # steepest descent sits at its right edge, 0.05 + 0.09
    assert histogram_breakpoint(values, bins=10) == pytest.approx(0.14, abs=1e-12)


def test_small_sample_takes_percentile_fallback():
    # the bimodal shape alone is not enough below the minimum sample count
    values = [0.05] * 30 + [0.95] * 5
    assert histogram_breakpoint(values, bins=10) == pytest.approx(0.05, abs=1e-12)


def test_identical_values_fall_back_to_that_value():
    assert histogram_breakpoint([0.42] * 10, bins=10) == pytest.approx(0.42)


def test_increasing_histogram_falls_back_to_70th_percentile():
    values = []
    for j in range(5):
        values.extend([j + 0.5] * (10 * (j + 1)))
    assert histogram_breakpoint(values, bins=5) == pytest.approx(
        float(np.percentile(values, 70))
    )


def test_histogram_breakpoint_empty_input():
    with pytest.raises(EmptyInput):
        histogram_breakpoint([], bins=10)


def _oracle_breakpoint(values, bins):
    """Exhaustive scan over hand-built equal-width bins."""
    lo, hi = min(values), max(values)
    width = (hi - lo) / bins
    counts = [0] * bins
    for v in values:
        idx = min(int((v - lo) / width), bins - 1)
        counts[idx] += 1
    best_i, best_drop = None, 0
    for i in range(bins - 1):
        drop = counts[i] - counts[i + 1]
        if drop > best_drop:
            best_i, best_drop = i, drop
    if best_i is None:
        return float(np.percentile(values, 70))
    return lo + width * (best_i + 1)


def test_breakpoint_matches_exhaustive_edge_scan():
    rng = np.random.default_rng(77)
    for trial in range(50):
        n = int(rng.integers(60, 400))
        # mixture draws produce histograms with real descents
        modes = rng.uniform(0, 1, size=int(rng.integers(1, 4)))
        values = [
            float(np.clip(rng.normal(rng.choice(modes), 0.07), 0, 1)) for _ in range(n)
        ]
        bins = int(rng.integers(5, 25))
        got = histogram_breakpoint(values, bins=bins)
        want = _oracle_breakpoint(values, bins)
        assert got == pytest.approx(want, abs=1e-9), (trial, bins)


# --- density curriculum ----------------------------------------------------------


def _curriculum(d0=100.0, d_min=20.0, t_down=8, t=0):
    return CurriculumState(
        d0={c: d0 for c in ClassId}, d_min={c: d_min for c in ClassId}, t_down=t_down, t=t
    )


def test_curriculum_boundaries_and_interior_point():
    cs = _curriculum()
    assert density_lambda(cs, CAR) == 100.0
    cs.t = 8
    assert density_lambda(cs, CAR) == 20.0
    cs.t = 12
    assert density_lambda(cs, CAR) == 20.0  # floor holds past the ramp
    cs.t = 4
    assert density_lambda(cs, CAR) == pytest.approx(60.0, abs=1e-12)


def test_curriculum_is_non_increasing_in_round():
    cs = _curriculum(d0=80, d_min=10, t_down=5)
    values = []
    for t in range(9):
        cs.t = t
        values.append(density_lambda(cs, CAR))
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_init_density_single_and_pair_and_fallback():
    box40 = Box3D(5, 0, 0, 4, 2, 2, 0)
    box30 = Box3D(30, 0, 0, 4, 2, 2, 0)
    box10 = Box3D(-30, 0, 0, 4, 2, 2, 0)
    rng = np.random.default_rng(3)

    def fill(box, n):
        return np.column_stack(
            [
                rng.uniform(box.x - 1.5, box.x + 1.5, n),
                rng.uniform(box.y - 0.8, box.y + 0.8, n),
                rng.uniform(box.z - 0.8, box.z + 0.8, n),
                np.zeros(n),
            ]
        )

    from sparse3d import Scene

    pts = np.vstack([fill(box40, 40), fill(box30, 30), fill(box10, 10)])
    scene = Scene(
        "d0", pts, [], [human_annotation(b) for b in (box40, box30, box10)]
    )

    one = FixedDetector([Detection(box40, CAR, 0.9)])
    cs = init_density(one, [scene], seed=0, d_min=D_MIN, t_down=4)
    assert cs.d0[CAR] == 40.0

    two = FixedDetector([Detection(box30, CAR, 0.9), Detection(box10, CAR, 0.8)])
    cs = init_density(two, [scene], seed=0, d_min=D_MIN, t_down=4)
    assert cs.d0[CAR] == pytest.approx(20.0)  # {10, 30} in-box counts

    assert cs.d0[ClassId.PEDESTRIAN] == 60.0  # no detections: configured fallback
    cs = init_density(FixedDetector([]), [scene], seed=0, d_min=D_MIN, t_down=4, d0_fallback=33.0)
    assert cs.d0[CAR] == 33.0


# --- selection --------------------------------------------------------------------


def _candidate(scene_id, box, cls_loss, cons_loss, density, score=0.9, cls=CAR):
    return Candidate(
        scene_id=scene_id,
        detection=Detection(box, cls, score),
        cls_loss=cls_loss,
        cons_loss=cons_loss,
        density=density,
    )


def _flat_curriculum(lam):
    return CurriculumState(
        d0={c: lam for c in ClassId}, d_min={c: lam for c in ClassId}, t_down=1, t=0
    )


def test_conjunction_mines_only_when_all_criteria_hold():
    scene = tiny_scene("sel0")
    box = Box3D(5, 5, 0, 4, 1.7, 1.6, 0)
    thresholds = {CAR: (0.3, 0.4)}
    cs = _flat_curriculum(50.0)

    good = _candidate("sel0", box, cls_loss=0.05, cons_loss=0.1, density=200)
    assert len(select_and_mine(scene, [good], thresholds, cs, [], 2)) == 1

    sparse = _candidate("sel0", box, cls_loss=0.05, cons_loss=0.1, density=10)
    assert select_and_mine(scene, [sparse], thresholds, cs, [], 2) == []

    uncertain = _candidate("sel0", box, cls_loss=0.5, cons_loss=0.1, density=200)
    assert select_and_mine(scene, [uncertain], thresholds, cs, [], 2) == []

    inconsistent = _candidate("sel0", box, cls_loss=0.05, cons_loss=0.9, density=200)
    assert select_and_mine(scene, [inconsistent], thresholds, cs, [], 2) == []


def test_overlap_with_human_annotation_is_dropped():
    box = Box3D(5, 5, 0, 4, 1.7, 1.6, 0)
    near = Box3D(5.2, 5.0, 0, 4, 1.7, 1.6, 0)
    assert rotated_bev_iou(box, near) > 0.3
    scene = tiny_scene("sel1", annotations=[human_annotation(box)])
    cand = _candidate("sel1", near, 0.05, 0.1, 200)
    assert select_and_mine(scene, [cand], {CAR: (0.3, 0.4)}, _flat_curriculum(50.0), [], 2) == []


def test_mined_annotations_carry_pseudo_round_and_respect_bank():
    scene = tiny_scene("sel2")
    far = Box3D(-20, -20, 0, 4, 1.7, 1.6, 0.4)
    cand = _candidate("sel2", far, 0.05, 0.1, 200)
    mined = select_and_mine(scene, [cand], {CAR: (0.3, 0.4)}, _flat_curriculum(50.0), [], 3)
    assert len(mined) == 1
    assert mined[0].provenance == Provenance.pseudo(3)

    # same box already banked: candidate is dropped
    mined = select_and_mine(
        scene, [cand], {CAR: (0.3, 0.4)}, _flat_curriculum(50.0), [far], 3
    )
    assert mined == []


def test_higher_scoring_candidate_wins_mutual_overlap():
    scene = tiny_scene("sel3")
    a = Box3D(0, 0, 0, 4, 1.7, 1.6, 0)
    b = Box3D(0.3, 0, 0, 4, 1.7, 1.6, 0)
    weak = _candidate("sel3", a, 0.05, 0.1, 200, score=0.6)
    strong = _candidate("sel3", b, 0.05, 0.1, 200, score=0.95)
    mined = select_and_mine(
        scene, [weak, strong], {CAR: (0.3, 0.4)}, _flat_curriculum(50.0), [], 2
    )
    assert [m.box for m in mined] == [b]


def test_selection_grows_as_rounds_relax_the_density_gate():
    rng = np.random.default_rng(55)
    scene = tiny_scene("sel4")
    candidates = []
    for i in range(40):
        box = Box3D(6.0 * i, 40, 0, 4, 1.7, 1.6, 0)  # far apart: dedup inert
        candidates.append(
            _candidate(
                "sel4", box,
                cls_loss=float(rng.uniform(0, 0.2)),
                cons_loss=float(rng.uniform(0, 0.3)),
                density=int(rng.integers(1, 120)),
            )
        )
    thresholds = {CAR: (0.25, 0.35)}
    cs = _curriculum(d0=100, d_min=5, t_down=6)
    previous: set = set()
    for t in range(7):
        cs.t = t
        mined = select_and_mine(scene, candidates, thresholds, cs, [], max(t, 2))
        current = {(m.box.x, m.box.y) for m in mined}
        assert current >= previous
        previous = current
    assert previous  # the relaxed gate eventually admits candidates


def test_bank_never_holds_overlapping_entries_after_mining():
    scene = tiny_scene("sel5", n_points=500, seed=8)
    rng = np.random.default_rng(4)
    candidates = []
    for _ in range(30):
        box = Box3D(
            float(rng.uniform(-25, 25)), float(rng.uniform(-25, 25)), 0, 4, 1.7, 1.6,
            float(rng.uniform(-3, 3)),
        )
        candidates.append(_candidate("sel5", box, 0.05, 0.1, 200, score=float(rng.random())))
    bank = bank_init([scene])
    mined = select_and_mine(
        scene, candidates, {CAR: (0.3, 0.4)}, _flat_curriculum(50.0), [], 2
    )
    bank_insert(bank, scene.id, mined, scene.points)
    entries = bank.entries_for("sel5")
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            assert rotated_bev_iou(entries[i].box, entries[j].box) <= 0.3


# --- candidate construction --------------------------------------------------------


class LatentEcho:
    """Perfectly equivariant detector: returns the scene's hidden boxes."""

    def __init__(self, score=1.0):
        self.score = score
        self.access = LatentAccess("test-echo")

    def infer(self, scene, opts, seed):
        return [
            Detection(a.box, a.class_id, self.score)
            for a in scene.latent(self.access)
            if self.score >= opts.score_threshold
        ]


def _latent_scene():
    latent = [
        human_annotation(Box3D(8, 0, 0, 4, 1.7, 1.6, 0.3)),
        human_annotation(Box3D(-12, 9, 0, 4, 1.7, 1.6, -1.0)),
    ]
    return tiny_scene("cand0", n_points=400, seed=2, latent=latent)


def test_perfectly_consistent_detector_scores_zero_losses():
    scene = _latent_scene()
    cands = build_candidates(LatentEcho(score=1.0), scene, seed=5)
    assert len(cands) == 2
    for c in cands:
        assert c.cls_loss == 0.0
        assert c.cons_loss == pytest.approx(0.0, abs=1e-6)
        assert c.scene_id == "cand0"


def test_unmatched_detection_gets_sentinel_consistency_loss():
    scene = _latent_scene()

    class RawOnly(LatentEcho):
        def __init__(self):
            super().__init__(score=0.9)
            self.calls = 0

        def infer(self, scene, opts, seed):
            self.calls += 1
            if self.calls == 1:
                return super().infer(scene, opts, seed)
            return []  # nothing on the augmented pass

    cands = build_candidates(RawOnly(), scene, seed=5)
    assert len(cands) == 2
    assert all(c.cons_loss == 1.0 for c in cands)


def test_build_candidates_deterministic():
    scene = _latent_scene()
    a = build_candidates(LatentEcho(0.8), scene, seed=9)
    b = build_candidates(LatentEcho(0.8), scene, seed=9)
    assert a == b


def test_pooled_thresholds_cover_present_classes_only():
    rng = np.random.default_rng(6)
    cands = []
    for i in range(120):
        box = Box3D(3.0 * i, 0, 0, 4, 1.7, 1.6, 0)
        cls = CAR if i % 2 == 0 else ClassId.PEDESTRIAN
        cands.append(
            _candidate("p0", box, float(rng.uniform(0, 1)), float(rng.uniform(0, 1)),
                       10, cls=cls)
        )
    thresholds = pooled_thresholds(cands, bins=10)
    assert set(thresholds) == {CAR, ClassId.PEDESTRIAN}
    for lam_u, lam_v in thresholds.values():
        assert math.isfinite(lam_u) and math.isfinite(lam_v)
