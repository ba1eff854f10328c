"""Oriented 3D boxes, point containment, overlap measures, scene augmentation.

Conventions: right-handed sensor frame with x forward, y left, z up.
A box is (x, y, z, l, w, h, yaw): center, extents, rotation about +z.
`l` runs along the heading, `w` across it; yaw is normalized to (-pi, pi].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TAU = 2.0 * math.pi

_DEGENERATE_AREA = 1e-12


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi].  Values already in range pass through unchanged."""
    if -math.pi < a <= math.pi:
        return a
    r = math.remainder(a, TAU)
    if r <= -math.pi:
        r += TAU
    return r


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    yaw: float

    def __post_init__(self) -> None:
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValueError(f"box extents must be positive, got {(self.l, self.w, self.h)}")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        for f in ("x", "y", "z", "l", "w", "h"):
            object.__setattr__(self, f, float(getattr(self, f)))

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    @property
    def bev_area(self) -> float:
        return self.l * self.w

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.l, self.w, self.h, self.yaw], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "Box3D":
        x, y, z, l, w, h, yaw = (float(v) for v in arr)
        return cls(x, y, z, l, w, h, yaw)

    def bev_corners(self) -> np.ndarray:
        """(4, 2) corner array in counter-clockwise order."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.l / 2.0, self.w / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]], dtype=np.float64)
        rot = np.array([[c, -s], [s, c]], dtype=np.float64)
        return local @ rot.T + np.array([self.x, self.y], dtype=np.float64)


def _polygon_area(poly: np.ndarray) -> float:
    # Shoelace; positive for counter-clockwise vertex order.  Working in
    # centroid-relative coordinates avoids cancellation for small polygons
    # far from the origin.
    x = poly[:, 0] - poly[:, 0].mean()
    y = poly[:, 1] - poly[:, 1].mean()
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of `subject` by convex CCW polygon `clip`.

    Points on a clip edge count as inside, so two identical rectangles clip
    to themselves exactly.
    """
    output = subject
    n = len(clip)
    for i in range(n):
        if len(output) == 0:
            break
        a = clip[i]
        b = clip[(i + 1) % n]
        edge = b - a
        # signed area of (edge, p - a); >= 0 means p lies left of (on) the edge
        cross = edge[0] * (output[:, 1] - a[1]) - edge[1] * (output[:, 0] - a[0])
        inside = cross >= 0.0
        verts = []
        m = len(output)
        for j in range(m):
            k = (j + 1) % m
            p, q = output[j], output[k]
            if inside[j]:
                verts.append(p)
                if not inside[k]:
                    verts.append(_edge_intersection(a, b, p, q))
            elif inside[k]:
                verts.append(_edge_intersection(a, b, p, q))
        output = np.asarray(verts, dtype=np.float64).reshape(-1, 2)
    return output


def _edge_intersection(a: np.ndarray, b: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    d1 = b - a
    d2 = q - p
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if denom == 0.0:
        # Segment numerically collinear with the clip line: both endpoints
        # already sit on it within rounding, so either one serves.
        return p
    t = ((p[0] - a[0]) * d2[1] - (p[1] - a[1]) * d2[0]) / denom
    return a + t * d1


def _bev_quick_reject(a: Box3D, b: Box3D) -> bool:
    reach = 0.5 * (math.hypot(a.l, a.w) + math.hypot(b.l, b.w))
    return (a.x - b.x) ** 2 + (a.y - b.y) ** 2 > reach * reach


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    if _bev_quick_reject(a, b):
        return 0.0
    inter = _clip_polygon(a.bev_corners(), b.bev_corners())
    if len(inter) < 3:
        return 0.0
    area = _polygon_area(inter)
    if area < _DEGENERATE_AREA:
        return 0.0
    return area


def rotated_bev_iou(a: Box3D, b: Box3D) -> float:
    """Bird's-eye-view IoU of two yaw-rotated rectangles."""
    inter = bev_intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    union = a.bev_area + b.bev_area - inter
    # rounding in the clipped area can push the ratio a hair past 1
    return min(inter / union, 1.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """3D IoU: BEV intersection extruded over the z-extent overlap."""
    dz = min(a.z + a.h / 2.0, b.z + b.h / 2.0) - max(a.z - a.h / 2.0, b.z - b.h / 2.0)
    if dz <= 0.0:
        return 0.0
    inter_bev = bev_intersection_area(a, b)
    if inter_bev == 0.0:
        return 0.0
    inter = inter_bev * dz
    union = a.volume + b.volume - inter
    return min(inter / union, 1.0)


def in_box_mask(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Boolean mask of the points inside `box`, boundary inclusive.

    `points` is (N, 3) or (N, 4); only xyz participates.
    """
    pts = np.asarray(points, dtype=np.float64)
    dx = pts[:, 0] - box.x
    dy = pts[:, 1] - box.y
    dz = pts[:, 2] - box.z
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (
        (np.abs(u) <= box.l / 2.0)
        & (np.abs(v) <= box.w / 2.0)
        & (np.abs(dz) <= box.h / 2.0)
    )


def points_in_box(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Indices of the points inside `box`, boundary inclusive."""
    return np.nonzero(in_box_mask(points, box))[0]


def in_any_box_mask(points: np.ndarray, boxes) -> np.ndarray:
    mask = np.zeros(len(points), dtype=bool)
    for box in boxes:
        mask |= in_box_mask(points, box)
    return mask


# --- global scene augmentation ---------------------------------------------
#
# Forward order: flip about x (mirrors y), flip about y (mirrors x),
# uniform scale, rotation about z.  The inverse applies the exact inverse
# operations in reverse order.


@dataclass(frozen=True)
class AugParams:
    flip_x: bool
    flip_y: bool
    scale: float
    rot_z: float

    def __post_init__(self) -> None:
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


IDENTITY_AUG = AugParams(flip_x=False, flip_y=False, scale=1.0, rot_z=0.0)


def sample_augmentation(
    rng: np.random.Generator,
    scale_range: tuple[float, float] = (0.8, 1.2),
    rot_range: tuple[float, float] = (-math.pi / 4.0, math.pi / 4.0),
) -> AugParams:
    """Draw flip/scale/rotation parameters.

    Flips are independent Bernoulli(0.5); scale and rotation are uniform over
    their ranges.  Draw order is fixed so a seeded generator reproduces the
    same parameters.
    """
    flip_x = bool(rng.random() < 0.5)
    flip_y = bool(rng.random() < 0.5)
    scale = float(rng.uniform(*scale_range))
    rot_z = float(rng.uniform(*rot_range))
    return AugParams(flip_x=flip_x, flip_y=flip_y, scale=scale, rot_z=rot_z)


def augment_points(points: np.ndarray, aug: AugParams, inverse: bool = False) -> np.ndarray:
    """Transform an (N, 3) or (N, 4) point array.  Intensity is untouched."""
    pts = np.array(points, dtype=np.float64, copy=True)
    x, y, z = pts[:, 0].copy(), pts[:, 1].copy(), pts[:, 2].copy()
    if not inverse:
        if aug.flip_x:
            y = -y
        if aug.flip_y:
            x = -x
        x, y, z = x * aug.scale, y * aug.scale, z * aug.scale
        c, s = math.cos(aug.rot_z), math.sin(aug.rot_z)
        x, y = c * x - s * y, s * x + c * y
    else:
        c, s = math.cos(-aug.rot_z), math.sin(-aug.rot_z)
        x, y = c * x - s * y, s * x + c * y
        inv = 1.0 / aug.scale
        x, y, z = x * inv, y * inv, z * inv
        if aug.flip_y:
            x = -x
        if aug.flip_x:
            y = -y
    pts[:, 0], pts[:, 1], pts[:, 2] = x, y, z
    return pts


def augment_box(box: Box3D, aug: AugParams, inverse: bool = False) -> Box3D:
    x, y, z, yaw = box.x, box.y, box.z, box.yaw
    l, w, h = box.l, box.w, box.h
    if not inverse:
        if aug.flip_x:
            y, yaw = -y, -yaw
        if aug.flip_y:
            x, yaw = -x, wrap_angle(math.pi - yaw)
        x, y, z = x * aug.scale, y * aug.scale, z * aug.scale
        l, w, h = l * aug.scale, w * aug.scale, h * aug.scale
        c, s = math.cos(aug.rot_z), math.sin(aug.rot_z)
        x, y = c * x - s * y, s * x + c * y
        yaw = wrap_angle(yaw + aug.rot_z)
    else:
        c, s = math.cos(-aug.rot_z), math.sin(-aug.rot_z)
        x, y = c * x - s * y, s * x + c * y
        yaw = wrap_angle(yaw - aug.rot_z)
        inv = 1.0 / aug.scale
        x, y, z = x * inv, y * inv, z * inv
        l, w, h = l * inv, w * inv, h * inv
        if aug.flip_y:
            x, yaw = -x, wrap_angle(math.pi - yaw)
        if aug.flip_x:
            y, yaw = -y, -yaw
    return Box3D(x, y, z, l, w, h, wrap_angle(yaw))
