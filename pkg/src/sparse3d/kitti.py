"""KITTI-format ingestion: velodyne scans, label files, calibration.

Labels store boxes in the rectified camera frame (x right, y down, z forward)
with `location` at the bottom face center and rotation `ry` about the camera
y axis.  We move them into the sensor frame (x forward, y left, z up):

    center_lidar = (R0_rect @ Tr_velo_to_cam)^-1 @ [location, 1]
    center_lidar.z += h / 2          # bottom face -> box center
    yaw = -ry - pi/2                 # camera ry -> lidar yaw, then wrapped
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedBinary, MalformedCalib, MalformedLabel
from .geometry import Box3D, wrap_angle
from .scene import Annotation, AnnotationMeta, NAME_TO_CLASS, Provenance, Scene

_POINT_RECORD = 16  # four little-endian float32 per point


def parse_velodyne(data: bytes) -> np.ndarray:
    """Decode a velodyne scan: packed (x, y, z, intensity) float32 quadruples."""
    if len(data) % _POINT_RECORD != 0:
        raise MalformedBinary(
            f"velodyne payload is {len(data)} bytes, not a multiple of {_POINT_RECORD}"
        )
    pts = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    return pts.astype(np.float64)


@dataclass(frozen=True)
class CalibMatrices:
    r0_rect: np.ndarray        # (4, 4)
    tr_velo_to_cam: np.ndarray  # (4, 4)

    def cam_to_lidar(self) -> np.ndarray:
        return np.linalg.inv(self.r0_rect @ self.tr_velo_to_cam)


def _homogeneous(values: list[float], rows: int, cols: int) -> np.ndarray:
    mat = np.eye(4, dtype=np.float64)
    mat[:rows, :cols] = np.asarray(values, dtype=np.float64).reshape(rows, cols)
    return mat


def parse_calib(text: str) -> CalibMatrices:
    r0 = None
    tr = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        key, _, rest = line.partition(":")
        fields = rest.split()
        try:
            values = [float(v) for v in fields]
        except ValueError as exc:
            raise MalformedCalib(f"line {lineno}: non-numeric calib entry") from exc
        if key == "R0_rect":
            if len(values) != 9:
                raise MalformedCalib(f"line {lineno}: R0_rect needs 9 values, got {len(values)}")
            r0 = _homogeneous(values, 3, 3)
        elif key == "Tr_velo_to_cam":
            if len(values) != 12:
                raise MalformedCalib(
                    f"line {lineno}: Tr_velo_to_cam needs 12 values, got {len(values)}"
                )
            tr = _homogeneous(values, 3, 4)
    if r0 is None or tr is None:
        raise MalformedCalib("calibration must provide R0_rect and Tr_velo_to_cam")
    return CalibMatrices(r0_rect=r0, tr_velo_to_cam=tr)


_LABEL_FIELDS = 15


def parse_label_line(line: str, lineno: int, calib: CalibMatrices) -> Annotation | None:
    """One label row -> sensor-frame annotation; DontCare rows return None."""
    fields = line.split()
    if len(fields) < _LABEL_FIELDS:
        raise MalformedLabel(f"line {lineno}: expected {_LABEL_FIELDS} fields, got {len(fields)}")
    name = fields[0]
    if name == "DontCare":
        return None
    if name not in NAME_TO_CLASS:
        return None  # classes outside the benchmark trio (Van, Truck, ...) are skipped
    try:
        vals = [float(v) for v in fields[1:_LABEL_FIELDS]]
    except ValueError as exc:
        raise MalformedLabel(f"line {lineno}: non-numeric label field") from exc
    truncation, occlusion_f = vals[0], vals[1]
    bbox = vals[3:7]
    h, w, l = vals[7], vals[8], vals[9]
    loc_cam = np.array([vals[10], vals[11], vals[12], 1.0], dtype=np.float64)
    ry = vals[13]
    occlusion = int(occlusion_f)
    if occlusion < -1 or occlusion > 3:
        raise MalformedLabel(f"line {lineno}: occlusion {occlusion} outside [-1, 3]")
    if occlusion == -1:
        occlusion = 3  # unknown: treat as fully occluded so difficulty gates fail

    center = calib.cam_to_lidar() @ loc_cam
    x, y, z = center[:3]
    z += h / 2.0
    yaw = wrap_angle(-ry - math.pi / 2.0)
    return Annotation(
        box=Box3D(x, y, z, l, w, h, yaw),
        class_id=NAME_TO_CLASS[name],
        provenance=Provenance.human(),
        meta=AnnotationMeta(
            truncation=truncation,
            occlusion=occlusion,
            bbox2d_height=bbox[3] - bbox[1],
        ),
    )


def parse_label_file(text: str, calib: CalibMatrices) -> list[Annotation]:
    annotations = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        ann = parse_label_line(line, lineno, calib)
        if ann is not None:
            annotations.append(ann)
    return annotations


def load_kitti_scene(
    velodyne_path: str | Path,
    label_path: str | Path,
    calib_path: str | Path,
    fov_filter: bool = False,
) -> Scene:
    """Assemble a scene from the three per-frame KITTI files.

    The full label set lands in both `annotations` and the latent list, so a
    later sparsification step can thin the former while evaluation keeps the
    truth.  `fov_filter` drops annotations behind the sensor (x <= 0), which
    camera-annotated datasets cannot label reliably.
    """
    velodyne_path, label_path, calib_path = Path(velodyne_path), Path(label_path), Path(calib_path)
    points = parse_velodyne(velodyne_path.read_bytes())
    calib = parse_calib(calib_path.read_text())
    annotations = parse_label_file(label_path.read_text(), calib)
    if fov_filter:
        annotations = [a for a in annotations if a.box.x > 0.0]
    return Scene(
        id=velodyne_path.stem,
        points=points,
        annotations=list(annotations),
        _latent=list(annotations),
    )


def load_kitti_dir(
    velodyne_dir: str | Path,
    label_dir: str | Path,
    calib_dir: str | Path,
    fov_filter: bool = False,
) -> list[Scene]:
    velodyne_dir, label_dir, calib_dir = Path(velodyne_dir), Path(label_dir), Path(calib_dir)
    scenes = []
    for velo in sorted(velodyne_dir.glob("*.bin")):
        stem = velo.stem
        scenes.append(
            load_kitti_scene(
                velo, label_dir / f"{stem}.txt", calib_dir / f"{stem}.txt", fov_filter=fov_filter
            )
        )
    return scenes
