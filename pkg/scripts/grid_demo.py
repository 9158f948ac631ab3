"""End-to-end demo: simulate a crash-style dataset and run the partition grid.

Writes data, schema and a run configuration into ``--out`` and then calls the
``grid`` and ``tests`` commands on them.

    python scripts/grid_demo.py --out demo --n-per-partition 300 --jobs 4
"""

import argparse
import json
from pathlib import Path

from choicefit.cli import main as cli
from choicefit.synth import crash_dataset, crash_schema


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="demo")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-per-partition", type=int, default=300)
    parser.add_argument("--mode", choices=["causation", "severity"], default="causation")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    crash_dataset(args.seed, args.n_per_partition).to_csv(out / "data.csv")
    (out / "schema.json").write_text(json.dumps(crash_schema(), indent=2), encoding="utf-8")
    run = {
        "data": "data.csv", "schema": "schema.json", "mode": args.mode,
        "candidates": ["X27", "X29", "X33", "X34"], "focal": ["X29"], "splits": ["X35"],
        "binning": {"variable": "X29", "edges": [[0, 42.5], [42.5, 52.5], [52.5, None]]},
    }
    (out / "run.json").write_text(json.dumps(run, indent=2), encoding="utf-8")
    code = cli(["grid", "--config", str(out / "run.json"), "--out", str(out / "grid"), "--jobs", str(args.jobs)])
    if code == 0 and args.mode == "severity":
        code = cli(["tests", "--config", str(out / "run.json"), "--out", str(out / "tests")])
    raise SystemExit(code)


if __name__ == "__main__":
    main()
