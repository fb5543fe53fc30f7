"""Run every experiment config in scripts/configs and write outputs under results/.

Usage: python3 scripts/run_all.py [--out DIR] [NAME ...]
"""

import argparse
import json
import sys
import time
from pathlib import Path

from brp.harness import load_config, run_experiment

HERE = Path(__file__).resolve().parent
CONFIGS = HERE / "configs"
HEADLINE = ("mean", "min", "max", "min_scaling", "violations")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default=str(HERE.parent / "results"))
    p.add_argument("names", nargs="*", help="config names without .cfg (default: all)")
    args = p.parse_args(argv)

    names = args.names or sorted(c.stem for c in CONFIGS.glob("*.cfg"))
    for name in names:
        t0 = time.perf_counter()
        report = run_experiment(load_config(CONFIGS / f"{name}.cfg"))
        report.write(Path(args.out) / name)
        s = report.summary
        head = {k: s[k] for k in HEADLINE if k in s}
        if "per_stream_bps" in s:
            head["per_stream_bps"] = s["per_stream_bps"]
        print(f"{name:<18} {time.perf_counter() - t0:6.1f}s  {json.dumps(head)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
