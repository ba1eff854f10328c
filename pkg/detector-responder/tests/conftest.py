"""Hand-rolled scene-file builder so reader tests are independent of any
other implementation of the format."""
import struct
import zlib

import numpy as np
import pytest


def annotation_record(
    box=(1.0, 2.0, 0.8, 4.0, 1.7, 1.6, 0.3),
    class_id=0,
    provenance=0,
    round_index=0,
    meta=None,
) -> bytes:
    out = struct.pack("<7d", *box) + struct.pack("<BBH", class_id, provenance, round_index)
    if meta is None:
        return out + struct.pack("<B", 0)
    truncation, occlusion, bbox_h = meta
    return out + struct.pack("<BdBd", 1, truncation, occlusion, bbox_h)


def scene_bytes(
    scene_id="hand0",
    points=None,
    annotations=(),
    latent=None,
    version=1,
    magic=b"S3DM",
) -> bytes:
    if points is None:
        points = np.zeros((0, 4))
    quantized = np.ascontiguousarray(points, dtype="<f4")
    sid = scene_id.encode("utf-8")
    parts = [
        magic,
        struct.pack("<HH", version, len(sid)),
        sid,
        struct.pack("<II", len(quantized), len(annotations)),
        quantized.tobytes(),
        *annotations,
    ]
    if latent is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<BI", 1, len(latent)))
        parts.extend(latent)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


@pytest.fixture
def box_cluster():
    """Uniform points filling an oriented box, plus the box parameters."""

    def build(x, y, z, l, w, h, yaw, count, seed=0):
        rng = np.random.default_rng(seed)
        u = rng.uniform(-l / 2, l / 2, count)
        v = rng.uniform(-w / 2, w / 2, count)
        t = rng.uniform(-h / 2, h / 2, count)
        c, s = np.cos(yaw), np.sin(yaw)
        return np.column_stack(
            [x + c * u - s * v, y + s * u + c * v, z + t, rng.random(count)]
        )

    return build
