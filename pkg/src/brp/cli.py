"""``brp-sim`` command line.

Exit codes: 0 ok, 1 configuration error, 2 runtime error.
"""

import argparse
import json
import sys

from brp.harness import load_config, parse_seeds, run_experiment
from brp.netsim import ConfigError
from brp.timing import build_layout


def build_parser():
    p = argparse.ArgumentParser(prog="brp-sim", description="Desk-scale BRP experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a config file")
    r.add_argument("config", help="flat 'key = value' config file")
    r.add_argument("--out", default=None, help="directory for CSV/JSON outputs (default: print the summary only)")
    r.add_argument("--seed-list", nargs="+", default=None, help="seeds overriding the config, e.g. 0 1 2 or 0-9")
    r.add_argument("--dump-layout", action="store_true", help="print the cycle window layout and exit")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        if args.seed_list:
            overrides["seeds"] = " ".join(str(s) for s in parse_seeds(" ".join(args.seed_list)))
        ec = load_config(args.config, **overrides)
    except (ConfigError, ValueError, OSError) as e:
        print(f"brp-sim: config error: {e}", file=sys.stderr)
        return 1

    try:
        if args.dump_layout:
            sc = ec.scenario
            print(build_layout(sc.cfg, sc.phy, sc.scaling).table())
            return 0
        report = run_experiment(ec)
        if args.out:
            for path in report.write(args.out):
                print(path)
        print(json.dumps(report.summary, indent=2, sort_keys=True))
    except Exception as e:  # noqa: BLE001 - anything past config parsing is a runtime failure
        print(f"brp-sim: runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
