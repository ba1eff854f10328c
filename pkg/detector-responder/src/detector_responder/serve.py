"""Poll loop: one request in flight, errors answered in-band, never crashes.

For every `req_<token>.json` in the working directory the loop loads the
named scene, runs the heuristic detector, and atomically writes
`resp_<token>.json` before deleting the request. Any per-request failure —
unreadable request, unknown protocol version, missing or corrupt scene —
becomes an `{"error": ...}` response instead of a crash, so one bad request
never takes the responder down.
"""
from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

from .detect import ResponderConfig, detect_objects
from .sceneio import read_scene

PROTOCOL_VERSION = 1


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _answer_request(req_path: Path, config: ResponderConfig) -> dict:
    request = json.loads(req_path.read_text())
    if not isinstance(request, dict):
        raise ValueError("request must be a JSON object")
    version = request.get("protocol_version")
    if version != PROTOCOL_VERSION:
        raise ValueError(f"protocol_version {version!r}, supported {PROTOCOL_VERSION}")
    scene_file = request["scene_file"]
    wanted = set(request.get("classes") or [])
    threshold = float(request.get("score_threshold", 0.0))
    # clusters are disjoint by construction, so the request's `nms` flag is
    # satisfied either way

    _, points = read_scene(config.workdir / scene_file)
    detections = [
        d
        for d in detect_objects(points, config)
        if d["score"] >= threshold and (not wanted or d["class"] in wanted)
    ]
    return {"protocol_version": PROTOCOL_VERSION, "detections": detections}


def _handle(req_path: Path, config: ResponderConfig) -> None:
    resp_path = req_path.with_name("resp_" + req_path.name[len("req_") :])
    try:
        response = _answer_request(req_path, config)
    except Exception as exc:  # answered in-band; the loop must survive anything
        response = {"error": f"{type(exc).__name__}: {exc}"}
    _atomic_write(resp_path, json.dumps(response).encode("utf-8"))
    req_path.unlink(missing_ok=True)


def serve(
    config: ResponderConfig,
    max_requests: int | None = None,
    idle_timeout_s: float | None = None,
    log=None,
) -> int:
    """Answer requests until interrupted; returns the number handled.

    `max_requests` and `idle_timeout_s` bound the loop for embedding in
    tests; the CLI leaves both unset and runs until Ctrl-C.
    """
    config.validate()
    workdir = Path(config.workdir)
    if not workdir.is_dir():
        raise FileNotFoundError(f"workdir {workdir} does not exist")

    handled = 0
    idle_since = time.monotonic()
    while max_requests is None or handled < max_requests:
        pending = sorted(workdir.glob("req_*.json"))
        if not pending:
            if (
                idle_timeout_s is not None
                and time.monotonic() - idle_since >= idle_timeout_s
            ):
                break
            time.sleep(config.poll_interval_s)
            continue
        for req_path in pending:
            _handle(req_path, config)
            handled += 1
            if log is not None:
                print(f"answered {req_path.name}", file=log)
            if max_requests is not None and handled >= max_requests:
                break
        idle_since = time.monotonic()
    return handled


def serve_forever(config: ResponderConfig) -> None:
    try:
        serve(config, log=sys.stderr)
    except KeyboardInterrupt:
        pass
