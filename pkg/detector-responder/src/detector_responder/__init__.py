"""Reference responder for the file-exchange detection protocol (version 1).

Watches a working directory for `req_<token>.json` files, loads the native
binary scene each one names, detects objects with a simple geometric
heuristic (ground removal, single-linkage clustering, principal-axis box
fit, size-prior classification), and writes `resp_<token>.json`. The point
of this package is the protocol boundary, not detection quality: it shares
no code with the pipeline that calls it and talks only through files.
"""
from .detect import DEFAULT_SIZE_PRIORS, ResponderConfig, detect_objects
from .sceneio import SceneFormatError, read_scene
from .serve import serve

__all__ = [
    "DEFAULT_SIZE_PRIORS",
    "ResponderConfig",
    "SceneFormatError",
    "detect_objects",
    "read_scene",
    "serve",
]
