#!/usr/bin/env python3
"""Run the streaming variant: offline warm-up, then capped-memory batches.

Prints the checkpoint curve (mAP and working-set size per round) and the
fraction of consecutive checkpoints where quality did not decrease.
"""
import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from sparse3d import RunConfig, StreamingConfig, SynthConfig, logs_to_jsonl, run_streaming


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", help="JSON config file (defaults to the built-in setup)")
    parser.add_argument("--log", help="write round logs (JSONL) here")
    args = parser.parse_args()

    if args.config:
        cfg = RunConfig.from_json_file(args.config)
        if cfg.streaming is None:
            cfg.streaming = StreamingConfig()
    else:
        cfg = RunConfig(
            seed=7,
            synth=SynthConfig(n_scenes=200),
            streaming=StreamingConfig(memory_cap=100, batch=100, stream_pool=400),
        )

    start = time.perf_counter()
    logs = run_streaming(cfg)
    print(f"finished in {time.perf_counter() - start:.1f}s")

    print(f"\n{'round':>5} {'memory':>7} {'bank':>6} {'mined':>6} {'mAP':>7}")
    for log in logs:
        print(
            f"{log.round_index:>5} {log.memory_size:>7} {log.bank_total:>6} "
            f"{log.mined_count:>6} {log.report.mean_ap:>7.1f}"
        )

    curve = [log.report.mean_ap for log in logs]
    pairs = list(zip(curve, curve[1:]))
    rising = sum(1 for a, b in pairs if b >= a - 1e-9)
    print(f"\nnon-decreasing checkpoints: {rising}/{len(pairs)}")
    print(f"peak working set: {max(log.memory_size for log in logs)} scenes")

    if args.log:
        Path(args.log).write_text(logs_to_jsonl(logs))
        print(f"round logs -> {args.log}")


if __name__ == "__main__":
    main()
