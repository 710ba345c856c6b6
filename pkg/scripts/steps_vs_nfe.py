"""Train once with periodic checkpoints and print the grid of sliced W2 by
training step (rows) and NFE (columns), read back from metrics.csv.

    python scripts/steps_vs_nfe.py --config configs/ring8_twinflow.ini
"""

from __future__ import annotations

import argparse
from pathlib import Path

from twinflow.experiment import load_config, read_csv, run_training


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/ring8_twinflow.ini")
    p.add_argument("--column", default="sliced_w2",
                   choices=["sliced_w2", "energy_dist", "modes", "diversity"])
    args = p.parse_args(argv)

    exp = load_config(args.config)
    run_training(exp)
    header, rows = read_csv(Path(exp.output_dir) / "metrics.csv")
    col = header.index(args.column)
    grid: dict[int, dict[int, str]] = {}
    for r in rows:
        grid.setdefault(int(r[0]), {})[int(r[1])] = r[col]
    nfes = sorted({k for v in grid.values() for k in v})
    print(f"{args.column} by step (rows) and NFE (columns)")
    print("step".rjust(8) + "".join(f"{k:>10d}" for k in nfes))
    for step in sorted(grid):
        print(f"{step:8d}" + "".join(f"{float(grid[step][k]):10.4f}" for k in nfes))


if __name__ == "__main__":
    main()
