"""Generate a synthetic labeled trial corpus plus its column mapping.

Usage:
    python scripts/make_synthetic_dataset.py out_dir [--trials 24] [--seed 3]

Writes out_dir/trials/*.csv and out_dir/mapping.json, ready for
``fallstream prepare``.
"""

import argparse
import json
from pathlib import Path

from fallstream.synth import make_dataset

MAPPING = {
    "timestamp": 0, "ax": 1, "ay": 2, "az": 3, "label": 4,
    "delimiter": ",", "header": False, "unit": "m/s2", "time_unit": "ms",
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--trials", type=int, default=24)
    parser.add_argument("--seed", type=int, default=3)
    args = parser.parse_args()

    trials_dir = args.out_dir / "trials"
    paths = make_dataset(trials_dir, n_trials=args.trials, seed=args.seed)
    mapping_path = args.out_dir / "mapping.json"
    mapping_path.write_text(json.dumps(MAPPING, indent=2) + "\n")
    print(f"wrote {len(paths)} trials to {trials_dir}")
    print(f"wrote column mapping to {mapping_path}")


if __name__ == "__main__":
    main()
