"""Sample-count thresholds for square fields at 64, 128 and 256 nodes.

    python3 scripts/calibration_table.py --trials 200 --out results
"""
import argparse
import sys
from pathlib import Path

from gridcsmac.cli import main

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--jobs", type=int, default=1)
    a = p.parse_args()
    sizes = "[" + ", ".join(f"[{n}, {n}]" for n in a.sizes) + "]"
    sys.exit(main(["calibrate", "--out", str(a.out), "--jobs", str(a.jobs), "-v",
                   "--override", f"calibrate.sizes={sizes}", "--override", f"calibrate.trials={a.trials}"]))
