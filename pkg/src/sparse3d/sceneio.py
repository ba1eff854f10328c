"""Native binary scene format.

Layout (all little-endian, CRC32 over every byte before the trailing u32):

    magic "S3DM" | u16 version | u16 id_len | id utf-8
    | u32 n_points | u32 n_annotations
    | points: n_points * 4 * f32 (x, y, z, intensity)
    | annotations: n_annotations records
    | u8 has_latent | [u32 n_latent | latent records]
    | u32 crc32

    annotation record:
        7 * f64 box (x, y, z, l, w, h, yaw) | u8 class | u8 provenance tag
        | u16 provenance round | u8 has_meta
        | [f64 truncation | u8 occlusion | f64 bbox2d_height]

Points are stored at float32 precision; annotation geometry at float64.
The hidden latent list is only written when explicitly requested so files
handed to external detectors never contain the answer key.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumMismatch, MalformedBinary, VersionMismatch
from .geometry import Box3D
from .scene import Annotation, AnnotationMeta, ClassId, Provenance, Scene

MAGIC = b"S3DM"
VERSION = 1

_PROV_TAGS = {"human": 0, "pseudo": 1}
_TAG_PROV = {v: k for k, v in _PROV_TAGS.items()}


class ByteReader:
    """Cursor over a byte buffer; underruns surface as MalformedBinary."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedBinary("payload ends mid-record")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def exhausted(self) -> bool:
        return self.pos == len(self.data)


def check_envelope(data: bytes, magic: bytes) -> bytes:
    """Validate magic + trailing CRC32; return the enclosed payload bytes."""
    if len(data) < len(magic) + 4:
        raise ChecksumMismatch("file shorter than header plus checksum")
    if data[: len(magic)] != magic:
        raise MalformedBinary(f"bad magic {data[:len(magic)]!r}, expected {magic!r}")
    body, crc_bytes = data[:-4], data[-4:]
    (stored,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(body) != stored:
        raise ChecksumMismatch("checksum mismatch")
    return body[len(magic) :]


def _pack_annotation(ann: Annotation) -> bytes:
    out = [ann.box.as_array().astype("<f8").tobytes()]
    out.append(struct.pack("<BBH", int(ann.class_id), _PROV_TAGS[ann.provenance.kind], ann.provenance.round_index))
    if ann.meta is None:
        out.append(struct.pack("<B", 0))
    else:
        out.append(struct.pack("<B", 1))
        out.append(struct.pack("<dBd", ann.meta.truncation, ann.meta.occlusion, ann.meta.bbox2d_height))
    return b"".join(out)


def _read_annotation(reader: ByteReader) -> Annotation:
    box_vals = np.frombuffer(reader.take(7 * 8), dtype="<f8")
    class_raw, tag, round_index = reader.unpack("BBH")
    if tag not in _TAG_PROV:
        raise MalformedBinary(f"unknown provenance tag {tag}")
    (has_meta,) = reader.unpack("B")
    meta = None
    if has_meta:
        truncation, occlusion, bbox_h = reader.unpack("dBd")
        meta = AnnotationMeta(truncation=truncation, occlusion=occlusion, bbox2d_height=bbox_h)
    return Annotation(
        box=Box3D.from_array(box_vals),
        class_id=ClassId(class_raw),
        provenance=Provenance(_TAG_PROV[tag], round_index),
        meta=meta,
    )


def scene_to_bytes(scene: Scene, include_latent: bool = True) -> bytes:
    sid = scene.id.encode("utf-8")
    parts = [MAGIC, struct.pack("<HH", VERSION, len(sid)), sid]
    parts.append(struct.pack("<II", len(scene.points), len(scene.annotations)))
    parts.append(np.ascontiguousarray(scene.points, dtype="<f4").tobytes())
    for ann in scene.annotations:
        parts.append(_pack_annotation(ann))
    latent = scene._latent if include_latent else None
    if latent is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<BI", 1, len(latent)))
        for ann in latent:
            parts.append(_pack_annotation(ann))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def scene_from_bytes(data: bytes) -> Scene:
    reader = ByteReader(check_envelope(data, MAGIC))
    version, id_len = reader.unpack("HH")
    if version != VERSION:
        raise VersionMismatch(f"scene format version {version}, supported {VERSION}")
    sid = reader.take(id_len).decode("utf-8")
    n_points, n_annotations = reader.unpack("II")
    raw = np.frombuffer(reader.take(n_points * 16), dtype="<f4").reshape(-1, 4)
    annotations = [_read_annotation(reader) for _ in range(n_annotations)]
    (has_latent,) = reader.unpack("B")
    latent = None
    if has_latent:
        (n_latent,) = reader.unpack("I")
        latent = [_read_annotation(reader) for _ in range(n_latent)]
    if not reader.exhausted():
        raise MalformedBinary("trailing bytes after scene payload")
    return Scene(id=sid, points=raw.astype(np.float64), annotations=annotations, _latent=latent)


def save_scene(scene: Scene, path: str | Path, include_latent: bool = True) -> None:
    Path(path).write_bytes(scene_to_bytes(scene, include_latent=include_latent))


def load_scene(path: str | Path) -> Scene:
    return scene_from_bytes(Path(path).read_bytes())


def save_dataset(scenes, directory: str | Path, include_latent: bool = True) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for scene in scenes:
        path = directory / f"{scene.id}.s3dm"
        save_scene(scene, path, include_latent=include_latent)
        paths.append(path)
    return paths


def load_dataset(directory: str | Path) -> list[Scene]:
    return [load_scene(p) for p in sorted(Path(directory).glob("*.s3dm"))]
