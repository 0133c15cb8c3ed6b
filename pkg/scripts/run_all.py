"""Run every analysis command for one scenario into a single output directory.

    python3 scripts/run_all.py --config scripts/example.toml --out results
"""
import argparse
import sys
import time
from pathlib import Path

from gridcsmac.cli import main

STEPS = ("generate", "analyze", "optimize", "simulate", "compare")


def run(config, out, jobs, steps):
    for cmd in steps:
        t0 = time.time()
        argv = [cmd, "--out", str(out), "--jobs", str(jobs)] + (["--config", str(config)] if config else [])
        code = main(argv)
        print(f"{cmd}: exit {code} in {time.time() - t0:.0f}s", file=sys.stderr)
        if code:
            return code
    return 0


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--steps", nargs="+", choices=STEPS, default=list(STEPS))
    a = p.parse_args()
    sys.exit(run(a.config, a.out, a.jobs, a.steps))
