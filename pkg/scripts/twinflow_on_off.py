"""Train ring8 with and without the twin terms over several seeds and compare
sample quality at each NFE (median over seeds).

    python scripts/twinflow_on_off.py --seeds 0 1 2 --steps 5000
"""

from __future__ import annotations

import argparse
import time
from dataclasses import replace

import numpy as np

from twinflow.experiment import evaluate_state, load_config
from twinflow.trainer import train


def run(config: str, lams, seeds, steps: int | None):
    exp = load_config(config, env={})
    table = {}
    for lam in lams:
        for seed in seeds:
            cfg = replace(exp.train, lam=lam, seed=seed,
                          steps=exp.train.steps if steps is None else steps)
            sub = replace(exp, train=cfg)
            t0 = time.perf_counter()
            state, _ = train(cfg)
            for rep in evaluate_state(sub, state):
                table.setdefault((lam, rep.nfe), []).append(rep)
            print(f"lambda={lam:.4f} seed={seed} trained in {time.perf_counter() - t0:.0f}s",
                  flush=True)
    return table


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/ring8_twinflow.ini")
    p.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 1 / 3])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--steps", type=int)
    args = p.parse_args(argv)
    table = run(args.config, args.lambdas, args.seeds, args.steps)
    print(f"\n{'lambda':>8} {'nfe':>4} {'sliced_w2':>10} {'modes':>6} {'diversity':>10}")
    for (lam, nfe), reps in sorted(table.items()):
        sw = np.median([r.sliced_w2 for r in reps])
        modes = np.median([r.modes_recovered or 0 for r in reps])
        div = np.median([r.diversity for r in reps])
        print(f"{lam:8.4f} {nfe:4d} {sw:10.4f} {modes:6.1f} {div:10.3f}")


if __name__ == "__main__":
    main()
