"""Per-scene instance bank.

Every annotated instance — the original human seed and each mined box — is
stored once with its cropped points canonicalized to the box frame (centered,
yaw zero).  Entries only accumulate; an insert that overlaps an existing
entry of the same scene (BEV IoU above the dedup threshold) is skipped, which
also makes inserts idempotent.

File layout ("S3DB", little-endian, CRC32 over everything before the final u32):

    magic | u16 version | u32 n_scenes | n_scenes * (u16 len | scene id)
    | u32 n_entries | entries | u32 crc32

    entry: u16 len | scene id | 7 * f64 box | u8 class | u8 provenance tag
           | u16 provenance round | u32 n_points | n_points * 4 * f32

Box geometry keeps float64; stored points are float32, so a save/load cycle
quantizes point payloads to float32 precision (and is byte-stable after the
first write).
"""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UnknownScene, VersionMismatch
from .geometry import Box3D, points_in_box, rotated_bev_iou
from .scene import Annotation, ClassId, Provenance, Scene
from .sceneio import ByteReader, check_envelope

BANK_MAGIC = b"S3DB"
BANK_VERSION = 1
BANK_DEDUP_IOU = 0.3

_PROV_TAGS = {"human": 0, "pseudo": 1}
_TAG_PROV = {v: k for k, v in _PROV_TAGS.items()}


@dataclass
class BankEntry:
    scene_id: str
    box: Box3D                # stored pose in the source scene
    class_id: ClassId
    points_local: np.ndarray  # (k, 4), box frame: centered, yaw zero
    provenance: Provenance
    score: float | None = None  # in-memory only; not persisted

    def points_at_pose(self) -> np.ndarray:
        """Entry points transformed back to the stored pose."""
        pts = np.array(self.points_local, dtype=np.float64, copy=True)
        c, s = math.cos(self.box.yaw), math.sin(self.box.yaw)
        x = c * pts[:, 0] - s * pts[:, 1] + self.box.x
        y = s * pts[:, 0] + c * pts[:, 1] + self.box.y
        pts[:, 0], pts[:, 1] = x, y
        pts[:, 2] += self.box.z
        return pts

    def as_annotation(self) -> Annotation:
        return Annotation(box=self.box, class_id=self.class_id, provenance=self.provenance)


def canonicalize_points(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Crop the in-box points and express them in the box frame."""
    crop = np.array(points[points_in_box(points, box)], dtype=np.float64)
    crop[:, 0] -= box.x
    crop[:, 1] -= box.y
    crop[:, 2] -= box.z
    c, s = math.cos(-box.yaw), math.sin(-box.yaw)
    x = c * crop[:, 0] - s * crop[:, 1]
    y = s * crop[:, 0] + c * crop[:, 1]
    crop[:, 0], crop[:, 1] = x, y
    return crop


@dataclass
class InstanceBank:
    entries: dict[str, list[BankEntry]] = field(default_factory=dict)

    def scene_ids(self) -> list[str]:
        return sorted(self.entries)

    def entries_for(self, scene_id: str) -> list[BankEntry]:
        if scene_id not in self.entries:
            raise UnknownScene(scene_id)
        return self.entries[scene_id]

    def track_scene(self, scene_id: str) -> None:
        self.entries.setdefault(scene_id, [])

    def drop_scene(self, scene_id: str) -> None:
        self.entries.pop(scene_id, None)

    def all_entries(self) -> list[BankEntry]:
        return [e for sid in self.scene_ids() for e in self.entries[sid]]

    def size_by_class(self) -> dict[ClassId, int]:
        counts = {c: 0 for c in ClassId}
        for entry in self.all_entries():
            counts[entry.class_id] += 1
        return counts

    def total(self) -> int:
        return sum(len(v) for v in self.entries.values())


def bank_init(scenes: list[Scene]) -> InstanceBank:
    """Seed a bank from current annotations; unannotated scenes are tracked empty."""
    bank = InstanceBank()
    for scene in scenes:
        bank.track_scene(scene.id)
        bank_insert(bank, scene.id, scene.annotations, scene.points)
    return bank


def bank_insert(
    bank: InstanceBank,
    scene_id: str,
    annotations: list[Annotation],
    scene_points: np.ndarray,
    dedup_iou: float = BANK_DEDUP_IOU,
) -> int:
    """Add entries for `annotations`, skipping overlaps; returns the number added."""
    existing = bank.entries_for(scene_id)
    added = 0
    for ann in annotations:
        if any(rotated_bev_iou(ann.box, e.box) > dedup_iou for e in existing):
            continue
        existing.append(
            BankEntry(
                scene_id=scene_id,
                box=ann.box,
                class_id=ann.class_id,
                points_local=canonicalize_points(scene_points, ann.box),
                provenance=ann.provenance,
            )
        )
        added += 1
    return added


# --- persistence -------------------------------------------------------------


def bank_to_bytes(bank: InstanceBank) -> bytes:
    parts = [BANK_MAGIC, struct.pack("<H", BANK_VERSION)]
    scene_ids = bank.scene_ids()
    parts.append(struct.pack("<I", len(scene_ids)))
    for sid in scene_ids:
        raw = sid.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    entries = bank.all_entries()
    parts.append(struct.pack("<I", len(entries)))
    for e in entries:
        raw = e.scene_id.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(e.box.as_array().astype("<f8").tobytes())
        parts.append(
            struct.pack(
                "<BBH", int(e.class_id), _PROV_TAGS[e.provenance.kind], e.provenance.round_index
            )
        )
        pts = np.ascontiguousarray(e.points_local, dtype="<f4")
        parts.append(struct.pack("<I", len(pts)))
        parts.append(pts.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def bank_from_bytes(data: bytes) -> InstanceBank:
    reader = ByteReader(check_envelope(data, BANK_MAGIC))
    (version,) = reader.unpack("H")
    if version != BANK_VERSION:
        raise VersionMismatch(f"bank format version {version}, supported {BANK_VERSION}")
    bank = InstanceBank()
    (n_scenes,) = reader.unpack("I")
    for _ in range(n_scenes):
        (id_len,) = reader.unpack("H")
        bank.track_scene(reader.take(id_len).decode("utf-8"))
    (n_entries,) = reader.unpack("I")
    for _ in range(n_entries):
        (id_len,) = reader.unpack("H")
        sid = reader.take(id_len).decode("utf-8")
        box = Box3D.from_array(np.frombuffer(reader.take(7 * 8), dtype="<f8"))
        class_raw, tag, round_index = reader.unpack("BBH")
        (n_points,) = reader.unpack("I")
        pts = np.frombuffer(reader.take(n_points * 16), dtype="<f4").reshape(-1, 4)
        bank.track_scene(sid)
        bank.entries[sid].append(
            BankEntry(
                scene_id=sid,
                box=box,
                class_id=ClassId(class_raw),
                points_local=pts.astype(np.float64),
                provenance=Provenance(_TAG_PROV[tag], round_index),
            )
        )
    return bank


def save_bank(bank: InstanceBank, path: str | Path) -> None:
    Path(path).write_bytes(bank_to_bytes(bank))


def load_bank(path: str | Path) -> InstanceBank:
    return bank_from_bytes(Path(path).read_bytes())
