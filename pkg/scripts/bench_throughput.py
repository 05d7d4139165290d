"""Measure end-to-end pipeline throughput in max-speed replay.

Usage:
    python scripts/bench_throughput.py artifact.json [--samples 500000]

Streams synthetic trials through windowing + features + inference with a
blocking bounded queue and reports samples/second.
"""

import argparse
import math
import tempfile
import time
from pathlib import Path

from fallstream.stream import PipelineConfig, ReplaySpec, run_pipeline
from fallstream.synth import make_trial


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("artifact", type=Path)
    parser.add_argument("--samples", type=int, default=500_000)
    args = parser.parse_args()

    samples = []
    trial_len = 10_000
    for i in range(math.ceil(args.samples / trial_len)):
        samples.extend(make_trial("fall" if i % 2 == 0 else "adl", trial_len,
                                  seed=i, device_id=f"dev{i % 4}"))
    samples = samples[:args.samples]

    with tempfile.NamedTemporaryFile(suffix=".jsonl") as sink:
        config = PipelineConfig(
            source=ReplaySpec(samples=samples, speed=math.inf),
            artifact_path=args.artifact,
            sinks=(f"file:{sink.name}",),
            overflow="block",
        )
        t0 = time.perf_counter()
        stats = run_pipeline(config)
        elapsed = time.perf_counter() - t0

    print(stats.format_line())
    print(f"{len(samples):,} samples in {elapsed:.2f}s "
          f"-> {len(samples) / elapsed:,.0f} samples/s")


if __name__ == "__main__":
    main()
