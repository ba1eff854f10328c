"""Command-line entry: serve a working directory until interrupted."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .detect import ResponderConfig
from .serve import serve_forever


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="detector-responder",
        description="Serve the file-exchange detection protocol with a "
        "clustering heuristic detector.",
    )
    parser.add_argument("--workdir", required=True, help="shared exchange directory")
    parser.add_argument("--ground-z", type=float, default=0.3,
                        help="drop points at or below this height (m)")
    parser.add_argument("--cluster-dist", type=float, default=0.9,
                        help="single-linkage distance (m)")
    parser.add_argument("--min-points", type=int, default=5,
                        help="smallest cluster reported")
    parser.add_argument("--saturation", type=float, default=60.0,
                        help="cluster size at which the score reaches 1.0")
    args = parser.parse_args(argv)

    config = ResponderConfig(
        workdir=Path(args.workdir),
        ground_z=args.ground_z,
        cluster_dist=args.cluster_dist,
        min_cluster_points=args.min_points,
        score_saturation=args.saturation,
    )
    try:
        config.validate()
        if not config.workdir.is_dir():
            raise FileNotFoundError(f"workdir {config.workdir} does not exist")
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"serving {config.workdir} (Ctrl-C to stop)", file=sys.stderr)
    serve_forever(config)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
