"""Sweep the twin share lambda and print final metrics per (lambda, NFE).

    python scripts/lambda_sweep.py --config configs/ring8_twinflow.ini \
        --lambdas 0,1/6,1/3,1/2,2/3
"""

from __future__ import annotations

import argparse

from twinflow.experiment import load_config, parse_lambdas, sweep_lambda


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/ring8_twinflow.ini")
    p.add_argument("--lambdas", default="0,1/6,1/3,1/2,2/3")
    p.add_argument("--output-dir", help="override the config's output_dir")
    args = p.parse_args(argv)

    exp = load_config(args.config)
    if args.output_dir:
        exp.output_dir = args.output_dir
    rows = sweep_lambda(exp, parse_lambdas(args.lambdas))
    print(f"{'lambda':>8} {'nfe':>4} {'sliced_w2':>10} {'modes':>6} {'diversity':>10}")
    for lam, nfe, sw, modes, div in rows:
        print(f"{lam:8.4f} {nfe:4d} {sw:10.4f} {str(modes):>6} {div:10.3f}")
    print(f"\nwrote {exp.output_dir}/sweep.csv")


if __name__ == "__main__":
    main()
