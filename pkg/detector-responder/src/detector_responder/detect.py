"""Geometric heuristic detector: ground removal, clustering, box fitting.

Pipeline per scene: drop points at or below the ground height, group the
rest by single-linkage euclidean clustering, fit one yaw-aligned box per
cluster from its bird's-eye-view principal axis, pick the class whose size
prior is nearest to the fitted extents, and score by cluster population.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

DEFAULT_SIZE_PRIORS: dict[str, tuple[float, float, float]] = {
    "Car": (4.0, 1.7, 1.6),
    "Pedestrian": (0.8, 0.6, 1.7),
    "Cyclist": (1.8, 0.6, 1.7),
}

_MIN_EXTENT = 0.05  # fitted boxes never collapse below this (meters)


@dataclass
class ResponderConfig:
    workdir: Path
    ground_z: float = 0.3
    cluster_dist: float = 0.9
    min_cluster_points: int = 5
    score_saturation: float = 60.0
    size_priors: dict[str, tuple[float, float, float]] = field(
        default_factory=lambda: dict(DEFAULT_SIZE_PRIORS)
    )
    poll_interval_s: float = 0.02

    def validate(self) -> None:
        if self.cluster_dist <= 0 or self.score_saturation <= 0:
            raise ValueError("cluster_dist and score_saturation must be positive")
        if self.min_cluster_points < 1:
            raise ValueError("min_cluster_points must be >= 1")
        if self.poll_interval_s <= 0:
            raise ValueError("poll_interval_s must be positive")
        if not self.size_priors:
            raise ValueError("size_priors must not be empty")
        for name, dims in self.size_priors.items():
            if len(dims) != 3 or any(d <= 0 for d in dims):
                raise ValueError(f"size prior for {name!r} must be three positive extents")


def _clusters(xyz: np.ndarray, dist: float, min_points: int) -> list[np.ndarray]:
    """Single-linkage components: indices of points chained within `dist`."""
    n = len(xyz)
    if n == 0:
        return []
    pairs = cKDTree(xyz).query_pairs(dist, output_type="ndarray")
    adjacency = coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)
    )
    n_components, labels = connected_components(adjacency, directed=False)
    return [
        members
        for k in range(n_components)
        if len(members := np.flatnonzero(labels == k)) >= min_points
    ]


def _fit_box(points: np.ndarray) -> dict:
    """Yaw-aligned box over a cluster via its BEV principal axis."""
    xy = points[:, :2]
    center_xy = xy.mean(axis=0)
    centered = xy - center_xy
    cov = centered.T @ centered / len(points)
    _, eigvecs = np.linalg.eigh(cov)
    axis = eigvecs[:, -1]  # largest-variance direction
    yaw = math.atan2(float(axis[1]), float(axis[0]))

    cos_y, sin_y = math.cos(yaw), math.sin(yaw)
    along = centered @ np.array([cos_y, sin_y])
    across = centered @ np.array([-sin_y, cos_y])
    length = max(float(along.max() - along.min()), _MIN_EXTENT)
    width = max(float(across.max() - across.min()), _MIN_EXTENT)

    z_lo, z_hi = float(points[:, 2].min()), float(points[:, 2].max())
    height = max(z_hi - z_lo, _MIN_EXTENT)
    mid_along = (float(along.max()) + float(along.min())) / 2.0
    mid_across = (float(across.max()) + float(across.min())) / 2.0
    return {
        "x": float(center_xy[0]) + mid_along * cos_y - mid_across * sin_y,
        "y": float(center_xy[1]) + mid_along * sin_y + mid_across * cos_y,
        "z": (z_lo + z_hi) / 2.0,
        "l": length,
        "w": width,
        "h": height,
        "yaw": yaw,
    }


def _nearest_class(
    box: dict, priors: dict[str, tuple[float, float, float]]
) -> str:
    dims = np.array([box["l"], box["w"], box["h"]])
    return min(
        priors,
        key=lambda name: float(np.linalg.norm(dims - np.asarray(priors[name]))),
    )


def detect_objects(points: np.ndarray, config: ResponderConfig) -> list[dict]:
    """Protocol-shaped detections (dicts with box fields, class, score)."""
    if len(points) == 0:
        return []
    above = points[points[:, 2] > config.ground_z]
    detections = []
    for members in _clusters(above[:, :3], config.cluster_dist, config.min_cluster_points):
        cluster = above[members]
        box = _fit_box(cluster)
        box["class"] = _nearest_class(box, config.size_priors)
        box["score"] = min(1.0, len(cluster) / config.score_saturation)
        detections.append(box)
    detections.sort(key=lambda d: (-d["score"], d["x"], d["y"]))
    return detections
