"""Heuristic detector: clustering, box fitting, classification, scoring."""
import math
from pathlib import Path

import numpy as np
import pytest

from detector_responder import ResponderConfig, detect_objects


def _config(**overrides) -> ResponderConfig:
    base = dict(workdir=Path("."), score_saturation=40.0)
    base.update(overrides)
    return ResponderConfig(**base)


def _ground(count=400, seed=1):
    rng = np.random.default_rng(seed)
    return np.column_stack(
        [
            rng.uniform(-30, 30, count),
            rng.uniform(-30, 30, count),
            rng.uniform(0.0, 0.05, count),
            rng.random(count),
        ]
    )


@pytest.mark.parametrize(
    "bad",
    [
        dict(cluster_dist=0.0),
        dict(min_cluster_points=0),
        dict(score_saturation=-1.0),
        dict(poll_interval_s=0.0),
        dict(size_priors={}),
        dict(size_priors={"Car": (4.0, -1.7, 1.6)}),
    ],
)
def test_config_validation_rejects_nonpositive_settings(bad):
    with pytest.raises(ValueError):
        _config(**bad).validate()


def test_empty_scene_yields_no_detections():
    assert detect_objects(np.zeros((0, 4)), _config()) == []


def test_pure_ground_yields_no_detections():
    assert detect_objects(_ground(), _config()) == []


def test_single_car_sized_cluster_is_one_car(box_cluster):
    yaw = 0.4
    cluster = box_cluster(8.0, -3.0, 0.8, 4.0, 1.7, 1.6, yaw, count=80, seed=2)
    dets = detect_objects(np.vstack([_ground(), cluster]), _config())
    assert len(dets) == 1
    (det,) = dets
    assert det["class"] == "Car"
    assert det["score"] == 1.0  # 80 points over saturation 40, clamped
    assert math.hypot(det["x"] - 8.0, det["y"] + 3.0) < 0.5
    # the principal axis is undirected: compare modulo a half turn
    assert min(abs(det["yaw"] - yaw) % math.pi, math.pi - abs(det["yaw"] - yaw) % math.pi) < 0.15


def test_person_sized_cluster_is_a_pedestrian(box_cluster):
    # centered high enough that the ground filter cannot shave the cluster
    cluster = box_cluster(5.0, 5.0, 1.2, 0.7, 0.6, 1.7, 0.0, count=30, seed=3)
    dets = detect_objects(np.vstack([_ground(), cluster]), _config())
    assert len(dets) == 1
    assert dets[0]["class"] == "Pedestrian"
    assert dets[0]["score"] == pytest.approx(30 / 40)


def test_distant_clusters_stay_separate_and_sort_by_score(box_cluster):
    strong = box_cluster(10.0, 0.0, 0.8, 4.0, 1.7, 1.6, 0.1, count=60, seed=4)
    weak = box_cluster(-15.0, 8.0, 0.9, 1.8, 0.6, 1.7, 1.0, count=12, seed=5)
    dets = detect_objects(np.vstack([weak, strong]), _config())
    assert len(dets) == 2
    assert dets[0]["score"] >= dets[1]["score"]
    assert dets[0]["x"] == pytest.approx(10.0, abs=0.5)


def test_small_clusters_fall_below_the_point_floor(box_cluster):
    tiny = box_cluster(12.0, 2.0, 0.9, 0.7, 0.6, 1.7, 0.0, count=4, seed=6)
    assert detect_objects(tiny, _config(min_cluster_points=5)) == []


def test_points_below_the_ground_threshold_are_ignored(box_cluster):
    # the whole cluster sits below ground_z, so nothing remains to cluster
    flat = box_cluster(6.0, 6.0, 0.1, 4.0, 1.7, 0.2, 0.0, count=50, seed=7)
    assert detect_objects(flat, _config(ground_z=0.3)) == []


def test_detection_fields_are_finite_and_protocol_shaped(box_cluster):
    cluster = box_cluster(-7.0, 11.0, 0.8, 4.2, 1.8, 1.5, -1.2, count=45, seed=8)
    (det,) = detect_objects(cluster, _config())
    assert set(det) == {"x", "y", "z", "l", "w", "h", "yaw", "class", "score"}
    for key in ("x", "y", "z", "l", "w", "h", "yaw", "score"):
        assert math.isfinite(det[key])
    assert det["l"] > 0 and det["w"] > 0 and det["h"] > 0
    assert 0.0 <= det["score"] <= 1.0
