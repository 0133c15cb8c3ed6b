"""Print the CSV outputs of a results directory as aligned text tables.

    python3 scripts/summarize.py results
"""
import csv
import sys
from pathlib import Path


def table(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        return ""
    rows = [[_short(c) for c in r] for r in rows]
    width = [max(len(r[i]) for r in rows if i < len(r)) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, width)) for r in rows)


def _short(cell):
    try:
        v = float(cell)
    except ValueError:
        return cell
    return cell if v.is_integer() or abs(v) == float("inf") else f"{v:.4g}"


if __name__ == "__main__":
    root = Path(sys.argv[1] if len(sys.argv) > 1 else "results")
    for p in sorted(root.glob("*.csv")):
        print(f"== {p.name}\n{table(p)}\n")
