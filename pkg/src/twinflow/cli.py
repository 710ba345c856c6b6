"""Command-line entry point: ``twinflow {train,sample,eval,sweep-lambda,gradcheck}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from . import gradcheck
from .checkpoint import CheckpointError
from .experiment import (
    METRIC_COLUMNS, SEED_ENV, ConfigError, draw_samples, evaluate_state, load_config,
    load_state, metric_row, parse_lambdas, run_training, sweep_lambda, write_csv,
)
from .svg import write_scatter
from .trainer import DivergenceError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("twinflow")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _nfe_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad NFE list {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("NFE values must be positive integers")
    return vals


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def cmd_train(config_path, resume=None) -> int:
    exp = load_config(config_path)
    t0 = time.perf_counter()
    state = run_training(exp, resume=resume)
    log.info("trained %d steps in %.1fs -> %s", state.step, time.perf_counter() - t0,
             exp.output_dir)
    return EXIT_OK


def _load_ckpt(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return load_state(path)


def cmd_sample(ckpt, nfe, n, branch, out, svg=False) -> int:
    exp, state = _load_ckpt(ckpt)
    seed = int(os.environ[SEED_ENV]) if os.environ.get(SEED_ENV) else None
    samples, labels = draw_samples(exp, state, n, nfe, branch, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    d = samples.shape[1]
    header = ["sample_id", *(f"dim_{j}" for j in range(d))]
    if labels is not None:
        header.append("label")
    rows = []
    for i, x in enumerate(samples):
        row = [i, *x]
        if labels is not None:
            row.append(int(labels[i]))
        rows.append(row)
    write_csv(out / "samples.csv", header, rows)
    if svg:
        write_scatter(out / "samples.svg", samples, labels,
                      title=f"{branch} branch, nfe={nfe}, step {state.step}")
    return EXIT_OK


def cmd_eval(ckpt, nfe_list, out) -> int:
    exp, state = _load_ckpt(ckpt)
    reports = evaluate_state(exp, state, nfe_list)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "metrics.csv", METRIC_COLUMNS, [metric_row(state.step, r) for r in reports])
    for r in reports:
        print(f"nfe={r.nfe} sliced_w2={r.sliced_w2:.5g} modes={r.modes_recovered} "
              f"diversity={r.diversity:.5g}")
    return EXIT_OK


def cmd_sweep_lambda(config_path, lambdas) -> int:
    exp = load_config(config_path)
    for lam, nfe, sw, modes, div in sweep_lambda(exp, parse_lambdas(lambdas)):
        print(f"lambda={lam:.4f} nfe={nfe} sliced_w2={sw:.5g} modes={modes} diversity={div:.5g}")
    return EXIT_OK


def cmd_gradcheck(n_cases: int = 100, seed: int = 0) -> int:
    t0 = time.perf_counter()
    results = gradcheck.run(n_cases, seed)
    err = gradcheck.max_relative_error(results)
    print(f"gradcheck: {len(results)} cases, max relative error {err:.3e} "
          f"({time.perf_counter() - t0:.2f}s)")
    return EXIT_OK if err < 1e-4 else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="twinflow", description="Desk-scale twin-trajectory flow experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="continue from a checkpoint written by a previous run")

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--nfe", type=_positive, default=1)
    s.add_argument("--n", type=_positive, default=1000)
    s.add_argument("--branch", choices=("real", "fake"), default="real")
    s.add_argument("--out", required=True)
    s.add_argument("--svg", action="store_true")

    e = sub.add_parser("eval", help="compute metrics for a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--nfe", type=_nfe_list, default=(1, 2, 4, 8))
    e.add_argument("--out", required=True)

    w = sub.add_parser("sweep-lambda", help="one training run per lambda")
    w.add_argument("--config", required=True)
    w.add_argument("--lambdas", default="0,1/6,1/3,1/2,2/3")

    g = sub.add_parser("gradcheck", help="finite-difference check of the autodiff engine")
    g.add_argument("--cases", type=_positive, default=100)
    g.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            return cmd_train(args.config, args.resume)
        if args.command == "sample":
            return cmd_sample(args.ckpt, args.nfe, args.n, args.branch, args.out, args.svg)
        if args.command == "eval":
            return cmd_eval(args.ckpt, args.nfe, args.out)
        if args.command == "sweep-lambda":
            return cmd_sweep_lambda(args.config, args.lambdas)
        return cmd_gradcheck(args.cases, args.seed)
    except ConfigError as exc:
        print(f"twinflow: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"twinflow: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, CheckpointError, ValueError) as exc:
        print(f"twinflow: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
