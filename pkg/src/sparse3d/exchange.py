"""File-exchange protocol (version 1) for out-of-process detectors.

For each inference the client drops two files into a shared working
directory and polls for the answer:

    scene_<uuid>.s3dm   native scene file, hidden truth stripped
    req_<uuid>.json     {"protocol_version": 1, "scene_file": "...",
                         "classes": ["Car", ...], "score_threshold": 0.1,
                         "nms": true}

The responder answers with `resp_<uuid>.json`, either

    {"protocol_version": 1, "detections": [{"x": ..., "y": ..., "z": ...,
      "l": ..., "w": ..., "h": ..., "yaw": ..., "class": "Car",
      "score": 0.87}, ...]}

or `{"error": "message"}`, and deletes the request file once the response is
in place.  Files are written to a temporary name and renamed into place so a
half-written JSON is never visible to the other side.
"""
from __future__ import annotations

import json
import math
import os
import time
import uuid
from pathlib import Path

from .detector import Detection, InferOptions
from .errors import ExchangeTimeout, ProtocolViolation, ResponderError
from .geometry import Box3D
from .scene import NAME_TO_CLASS, CLASS_NAMES, ClassId, Scene
from .sceneio import scene_to_bytes

PROTOCOL_VERSION = 1
POLL_INTERVAL_S = 0.05

_BOX_KEYS = ("x", "y", "z", "l", "w", "h", "yaw")


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _parse_detection(entry: object, known: set[str]) -> Detection:
    if not isinstance(entry, dict):
        raise ProtocolViolation(f"detection entry must be an object, got {type(entry).__name__}")
    for key in (*_BOX_KEYS, "class", "score"):
        if key not in entry:
            raise ProtocolViolation(f"detection entry missing field {key!r}")
    vals = {}
    for key in (*_BOX_KEYS, "score"):
        v = entry[key]
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise ProtocolViolation(f"detection field {key!r} must be a finite number")
        vals[key] = float(v)
    if not (0.0 <= vals["score"] <= 1.0):
        raise ProtocolViolation(f"score {vals['score']} outside [0, 1]")
    if vals["l"] <= 0 or vals["w"] <= 0 or vals["h"] <= 0:
        raise ProtocolViolation("box extents must be positive")
    cls_name = entry["class"]
    if cls_name not in known:
        raise ProtocolViolation(f"unknown class {cls_name!r}")
    return Detection(
        box=Box3D(*(vals[k] for k in _BOX_KEYS)),
        class_id=NAME_TO_CLASS[cls_name],
        score=vals["score"],
    )


def external_exchange(
    workdir: str | Path,
    scene: Scene,
    opts: InferOptions,
    timeout_s: float = 5.0,
    classes: list[ClassId] | None = None,
) -> list[Detection]:
    """Run one inference through the file protocol and validate the reply."""
    workdir = Path(workdir)
    token = uuid.uuid4().hex
    scene_name = f"scene_{token}.s3dm"
    req_path = workdir / f"req_{token}.json"
    resp_path = workdir / f"resp_{token}.json"
    class_names = [CLASS_NAMES[c] for c in (classes or list(ClassId))]

    _atomic_write(workdir / scene_name, scene_to_bytes(scene, include_latent=False))
    request = {
        "protocol_version": PROTOCOL_VERSION,
        "scene_file": scene_name,
        "classes": class_names,
        "score_threshold": opts.score_threshold,
        "nms": opts.nms,
    }
    _atomic_write(req_path, json.dumps(request).encode("utf-8"))

    deadline = time.monotonic() + timeout_s
    try:
        while not resp_path.exists():
            if time.monotonic() >= deadline:
                raise ExchangeTimeout(f"no response within {timeout_s:.1f}s for {req_path.name}")
            time.sleep(POLL_INTERVAL_S)
        try:
            payload = json.loads(resp_path.read_text())
        except json.JSONDecodeError as exc:
            raise ProtocolViolation(f"response is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise ProtocolViolation("response must be a JSON object")
        if "error" in payload:
            raise ResponderError(str(payload["error"]))
        if payload.get("protocol_version") != PROTOCOL_VERSION:
            raise ProtocolViolation(
                f"protocol_version {payload.get('protocol_version')!r}, expected {PROTOCOL_VERSION}"
            )
        detections = payload.get("detections")
        if not isinstance(detections, list):
            raise ProtocolViolation("response missing detections list")
        known = set(class_names)
        return [_parse_detection(entry, known) for entry in detections]
    finally:
        for leftover in (workdir / scene_name, req_path, resp_path):
            try:
                leftover.unlink()
            except FileNotFoundError:
                pass


class ExchangeDetector:
    """Detector-protocol adapter over the file exchange; `seed` is ignored
    because the remote process owns its randomness."""

    def __init__(self, workdir: str | Path, timeout_s: float = 5.0,
                 classes: list[ClassId] | None = None):
        self.workdir = Path(workdir)
        self.timeout_s = timeout_s
        self.classes = classes

    def infer(self, scene: Scene, opts: InferOptions, seed: int) -> list[Detection]:
        return external_exchange(self.workdir, scene, opts, self.timeout_s, self.classes)
