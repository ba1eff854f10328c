"""Command-line surface for the pipeline.

Exit codes: 0 success, 1 usage error, 2 data error (bad files, bad config,
empty datasets), 3 runtime error.  All diagnostics go to stderr; no
subcommand modifies its inputs.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bank import load_bank
from .detector import Detection
from .errors import (
    ConfigInvalid,
    DatasetEmpty,
    EmptyInput,
    EmptyScene,
    FormatError,
    Sparse3DError,
    UnknownScene,
)
from .evaluate import EvalReport, pooled_ap, write_csv_report, write_json_report
from .geometry import Box3D
from .kitti import load_kitti_dir
from .loop import RunConfig, run, run_streaming
from .scene import CLASS_NAMES, NAME_TO_CLASS, ClassId
from .sceneio import load_dataset, save_dataset
from .synthetic import SynthConfig, perturb_annotations, sparsify, synthesize_dataset

USAGE_ERROR = 1
DATA_ERROR = 2
RUNTIME_ERROR = 3

_DATA_ERRORS = (
    FormatError,
    ConfigInvalid,
    DatasetEmpty,
    EmptyInput,
    EmptyScene,
    UnknownScene,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    json.JSONDecodeError,
)


def _cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_scenes=args.scenes,
        objects_min=args.objects_min,
        objects_max=args.objects_max,
    )
    scenes = synthesize_dataset(cfg, args.seed)
    save_dataset(scenes, args.out)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return 0


def _cmd_ingest_kitti(args) -> int:
    scenes = load_kitti_dir(args.velodyne, args.labels, args.calib, fov_filter=args.fov_filter)
    if not scenes:
        raise DatasetEmpty(f"no velodyne frames under {args.velodyne}")
    save_dataset(scenes, args.out)
    print(f"ingested {len(scenes)} frames to {args.out}")
    return 0


def _cmd_sparsify(args) -> int:
    scenes = load_dataset(args.input)
    if not scenes:
        raise DatasetEmpty(f"no scenes under {args.input}")
    out = sparsify(scenes, strategy=args.strategy, keep_n=args.keep_n, seed=args.seed)
    save_dataset(out, args.out)
    print(f"sparsified {len(out)} scenes to {args.out}")
    return 0


def _cmd_perturb(args) -> int:
    scenes = load_dataset(args.input)
    if not scenes:
        raise DatasetEmpty(f"no scenes under {args.input}")
    out = perturb_annotations(scenes, args.ratio, (args.iou_lo, args.iou_hi), seed=args.seed)
    save_dataset(out, args.out)
    print(f"perturbed {len(out)} scenes to {args.out}")
    return 0


def _finish_run(logs, args) -> int:
    if args.report_json or args.report_csv:
        reports = [log.report for log in logs]
        if args.report_json:
            write_json_report(reports, args.report_json)
        if args.report_csv:
            write_csv_report(reports, args.report_csv)
    final = logs[-1].report
    print(f"rounds: {len(logs)}  final mean AP: {_fmt(final.mean_ap)}")
    print(
        f"bank: {logs[-1].bank_total} entries  "
        f"coverage: {_fmt(final.aggregate_coverage)}  "
        f"pseudo precision: {_fmt(final.aggregate_precision)}"
    )
    return 0


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def _cmd_run(args) -> int:
    cfg = RunConfig.from_json_file(args.config)
    logs = run(cfg, workers=args.workers, log_path=args.log)
    return _finish_run(logs, args)


def _cmd_run_streaming(args) -> int:
    cfg = RunConfig.from_json_file(args.config)
    logs = run_streaming(cfg, workers=args.workers, log_path=args.log)
    return _finish_run(logs, args)


def _parse_det_entry(obj: dict) -> Detection:
    box = Box3D(obj["x"], obj["y"], obj["z"], obj["l"], obj["w"], obj["h"], obj["yaw"])
    return Detection(box, NAME_TO_CLASS[obj["class"]], float(obj["score"]))


def _parse_gt_entry(obj: dict) -> tuple[Box3D, ClassId]:
    box = Box3D(obj["x"], obj["y"], obj["z"], obj["l"], obj["w"], obj["h"], obj["yaw"])
    return box, NAME_TO_CLASS[obj["class"]]


def _cmd_eval(args) -> int:
    try:
        dets_raw = json.loads(Path(args.dets).read_text())
        gts_raw = json.loads(Path(args.gts).read_text())
        dets = {sid: [_parse_det_entry(o) for o in lst] for sid, lst in dets_raw.items()}
        gts = {sid: [_parse_gt_entry(o) for o in lst] for sid, lst in gts_raw.items()}
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, json.JSONDecodeError):
            raise
        raise FormatError(f"bad detection/ground-truth entry: {exc}") from exc
    result = pooled_ap(dets, gts, positions=args.positions)
    payload = {CLASS_NAMES[c]: result[c] for c in sorted(result)}
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _cmd_bank_inspect(args) -> int:
    bank = load_bank(args.bank)
    sizes = bank.size_by_class()
    print(f"scenes tracked: {len(bank.scene_ids())}")
    print(f"entries: {bank.total()}")
    for cls in sorted(sizes):
        print(f"  {CLASS_NAMES[cls]}: {sizes[cls]}")
    by_kind: dict[str, int] = {}
    for entry in bank.all_entries():
        by_kind[entry.provenance.kind] = by_kind.get(entry.provenance.kind, 0) + 1
    for kind in sorted(by_kind):
        print(f"  {kind}: {by_kind[kind]}")
    return 0


def _cmd_report(args) -> int:
    lines = Path(args.logs).read_text().splitlines()
    reports = []
    for line in lines:
        if not line.strip():
            continue
        payload = json.loads(line)["report"]
        name_to_class = {name: cid for cid, name in CLASS_NAMES.items()}
        reports.append(
            EvalReport(
                round_index=payload["round"],
                ap={
                    name_to_class[n]: levels for n, levels in payload["ap"].items()
                },
                mining_precision={
                    name_to_class[n]: v for n, v in payload["mining_precision"].items()
                },
                mining_coverage={
                    name_to_class[n]: v for n, v in payload["mining_coverage"].items()
                },
                aggregate_precision=payload["aggregate_precision"],
                aggregate_coverage=payload["aggregate_coverage"],
                mean_ap=payload["mean_ap"],
            )
        )
    write_csv_report(reports, args.csv)
    print(f"wrote {len(reports)} rounds to {args.csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparse3d",
        description="Sparsely-annotated 3D detection pipeline: mining, "
        "background cleaning, scene generation, and the closed training loop.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=300)
    p.add_argument("--objects-min", type=int, default=4)
    p.add_argument("--objects-max", type=int, default=8)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("ingest-kitti", help="convert KITTI frames to the native format")
    p.add_argument("--velodyne", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fov-filter", action="store_true")
    p.set_defaults(fn=_cmd_ingest_kitti)

    p = sub.add_parser("sparsify", help="keep only a few annotations per scene")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=("random", "easy", "hard"), default="random")
    p.add_argument("--keep-n", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_sparsify)

    p = sub.add_parser("perturb", help="jitter a fraction of annotations to a target overlap band")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--iou-lo", type=float, default=0.45)
    p.add_argument("--iou-hi", type=float, default=0.55)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_perturb)

    p = sub.add_parser("run", help="run the full alternating loop")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--log", default=None, help="round log JSONL path")
    p.add_argument("--report-json", default=None)
    p.add_argument("--report-csv", default=None)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("run-streaming", help="run the streaming-unlabeled variant")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--log", default=None)
    p.add_argument("--report-json", default=None)
    p.add_argument("--report-csv", default=None)
    p.set_defaults(fn=_cmd_run_streaming)

    p = sub.add_parser("eval", help="score detection files against ground truth files")
    p.add_argument("--dets", required=True)
    p.add_argument("--gts", required=True)
    p.add_argument("--positions", type=int, choices=(11, 40), default=40)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("bank", help="instance bank utilities")
    bank_sub = p.add_subparsers(dest="bank_command", required=True)
    pb = bank_sub.add_parser("inspect", help="summarize a bank file")
    pb.add_argument("--bank", required=True)
    pb.set_defaults(fn=_cmd_bank_inspect)

    p = sub.add_parser("report", help="convert round logs to CSV")
    p.add_argument("--logs", required=True)
    p.add_argument("--csv", required=True)
    p.set_defaults(fn=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage problems
        return 0 if exc.code == 0 else USAGE_ERROR
    try:
        return args.fn(args)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except Sparse3DError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to an exit code
        print(f"unexpected error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
