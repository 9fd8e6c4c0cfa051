"""Command-line entry point."""
from __future__ import annotations

import argparse
import sys

from .run import COMMANDS, ConfigError, ExperimentConfig, RunError, run


def build_parser():
    p = argparse.ArgumentParser(prog="leslab", description="Run one verification experiment.")
    p.add_argument("--command", required=True, choices=COMMANDS)
    p.add_argument("--cover", default="uloc", help="uloc, dyadic, axial or a cover JSON path")
    p.add_argument("--rmax", type=float)
    p.add_argument("--h", type=float, help="grid spacing")
    p.add_argument("--dt", type=float, help="time step")
    p.add_argument("--n", type=int, help="cutoff radius parameter")
    p.add_argument("--bigk", type=int, help="number of retarded pieces")
    p.add_argument("--gamma", type=float, help="mollifier scale")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/latest", help="run directory")
    p.add_argument("--balls", type=lambda s: [int(x) for x in s.split(",") if x.strip()],
                   help="comma-separated base ball ids (estimate-verify)")
    p.add_argument("--velocity", default="zero", choices=("zero", "bump"), help="solve-linear advecting field")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    cfg = ExperimentConfig(**vars(args))
    try:
        status, run_dir = run(cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except RunError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    print((run_dir / "report.csv").read_text(), end="")
    print(f"{'PASS' if status == 0 else 'FAIL'}: {run_dir}")
    return status


if __name__ == "__main__":
    sys.exit(main())
