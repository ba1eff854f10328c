"""Minimal reader for the native binary scene format, version 1.

Layout (little-endian, CRC-32 over every byte before the trailing u32):

    magic "S3DM" | u16 version | u16 id_len | id utf-8
    | u32 n_points | u32 n_annotations
    | points: n_points * 4 * f32 (x, y, z, intensity)
    | annotations: n_annotations records
    | u8 has_latent | [u32 n_latent | latent records]
    | u32 crc32

    annotation record:
        7 * f64 box | u8 class | u8 provenance tag | u16 round
        | u8 has_meta | [f64 truncation | u8 occlusion | f64 bbox2d_height]

The responder only needs the scene id and the point block; annotation and
hidden-truth records are walked structurally and discarded.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"S3DM"
VERSION = 1


class SceneFormatError(ValueError):
    """The file is not a readable version-1 scene."""


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SceneFormatError("payload ends mid-record")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def exhausted(self) -> bool:
        return self.pos == len(self.data)


def _skip_annotation(cur: _Cursor) -> None:
    cur.take(7 * 8 + 1 + 1 + 2)
    (has_meta,) = cur.unpack("B")
    if has_meta:
        cur.take(8 + 1 + 8)


def scene_points_from_bytes(data: bytes) -> tuple[str, np.ndarray]:
    """Return (scene id, (N, 4) float64 points) or raise SceneFormatError."""
    if len(data) < len(MAGIC) + 4:
        raise SceneFormatError("file shorter than header plus checksum")
    if data[: len(MAGIC)] != MAGIC:
        raise SceneFormatError(f"bad magic {data[:len(MAGIC)]!r}")
    body, crc_bytes = data[:-4], data[-4:]
    (stored,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(body) != stored:
        raise SceneFormatError("checksum mismatch")

    cur = _Cursor(body[len(MAGIC) :])
    version, id_len = cur.unpack("HH")
    if version != VERSION:
        raise SceneFormatError(f"scene format version {version}, supported {VERSION}")
    scene_id = cur.take(id_len).decode("utf-8")
    n_points, n_annotations = cur.unpack("II")
    points = (
        np.frombuffer(cur.take(n_points * 16), dtype="<f4")
        .reshape(-1, 4)
        .astype(np.float64)
    )
    for _ in range(n_annotations):
        _skip_annotation(cur)
    (has_latent,) = cur.unpack("B")
    if has_latent:
        (n_latent,) = cur.unpack("I")
        for _ in range(n_latent):
            _skip_annotation(cur)
    if not cur.exhausted():
        raise SceneFormatError("trailing bytes after scene payload")
    return scene_id, points


def read_scene(path: str | Path) -> tuple[str, np.ndarray]:
    return scene_points_from_bytes(Path(path).read_bytes())
