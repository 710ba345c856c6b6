"""Experiment plumbing shared by the command line: config files, run directories,
checkpoint round trips, periodic evaluation and the lambda sweep."""

from __future__ import annotations

import configparser
import csv
import io
import logging
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .data import DatasetSpec, sample_data
from .metrics import MetricsReport, evaluate_samples
from .model import VelocityNet
from .sampler import integrate, nfe_sweep
from .svg import write_scatter
from .trainer import LOSS_COLUMNS, TrainConfig, TrainState, train

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "nfe", "sliced_w2", "energy_dist", "modes", "diversity")
SWEEP_COLUMNS = ("lambda", "nfe", "sliced_w2", "modes", "diversity")
SEED_ENV = "TWINFLOW_SEED"


class ConfigError(ValueError):
    pass


def fmt(v) -> str:
    """CSV cell: floats round-trip with 17 significant digits, None is empty."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# ---------------------------------------------------------------- config file


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(Fraction(p.strip())) for p in s.split(",") if p.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.split(",") if p.strip())


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("none", "") else float(s)


def _frac(s: str) -> float:
    return float(Fraction(s.strip()))


# section -> key -> (parser, printer)
_SCHEMA = {
    "data": {
        "id": (str, str),
        "dim": (int, str),
        "radius": (float, repr),
        "sigma": (float, repr),
        "center": (_floats, lambda v: ", ".join(repr(c) for c in v)),
        "conditional": (_bool, lambda v: str(v).lower()),
    },
    "model": {
        "hidden": (int, str),
        "depth": (int, str),
        "n_freqs": (int, str),
        "max_freq": (float, repr),
    },
    "train": {
        "lambda": (_frac, repr),
        "lr": (float, repr),
        "beta1": (float, repr),
        "beta2": (float, repr),
        "eps": (float, repr),
        "weight_decay": (float, repr),
        "ema_decay": (float, repr),
        "grad_clip": (_opt_float, lambda v: "none" if v is None else repr(v)),
        "batch_size": (int, str),
        "steps": (int, str),
        "seed": (int, str),
        "eval_every": (int, str),
        "rectify_weighting": (str, str),
        "rectify_sign": (float, repr),
        "fake_target_zero": (_bool, lambda v: str(v).lower()),
        "base_weighting": (str, str),
        "fm_fraction": (float, repr),
    },
    "output": {
        "output_dir": (str, str),
        "nfe_list": (_ints, lambda v: ", ".join(str(k) for k in v)),
        "plot": (_bool, lambda v: str(v).lower()),
        "eval_samples": (int, str),
        "n_proj": (int, str),
    },
}


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/default"
    nfe_list: tuple[int, ...] = (1, 2, 4, 8)
    plot: bool = False
    eval_samples: int = 2000
    n_proj: int = 256

    def __post_init__(self):
        if not self.nfe_list or min(self.nfe_list) < 1:
            raise ValueError("nfe_list must be a nonempty list of positive integers")
        if self.eval_samples < 2:
            raise ValueError("eval_samples must be >= 2")

    def flat(self) -> dict[str, dict[str, object]]:
        """Nested {section: {key: value}} view of every setting."""
        t, d = self.train, self.train.dataset
        return {
            "data": {"id": d.id, "dim": d.dim, "radius": d.radius, "sigma": d.sigma,
                     "center": tuple(d.center), "conditional": d.conditional},
            "model": {"hidden": t.hidden, "depth": t.depth, "n_freqs": t.n_freqs,
                      "max_freq": t.max_freq},
            "train": {"lambda": t.lam, "lr": t.lr, "beta1": t.betas[0], "beta2": t.betas[1],
                      "eps": t.eps, "weight_decay": t.weight_decay, "ema_decay": t.ema_decay,
                      "grad_clip": t.grad_clip, "batch_size": t.batch_size, "steps": t.steps,
                      "seed": t.seed, "eval_every": t.eval_every,
                      "rectify_weighting": t.rectify_weighting, "rectify_sign": t.rectify_sign,
                      "fake_target_zero": t.fake_target_zero,
                      "base_weighting": t.base_weighting, "fm_fraction": t.fm_fraction},
            "output": {"output_dir": self.output_dir, "nfe_list": tuple(self.nfe_list),
                       "plot": self.plot, "eval_samples": self.eval_samples,
                       "n_proj": self.n_proj},
        }

    def to_ini(self) -> str:
        out = io.StringIO()
        for section, values in self.flat().items():
            out.write(f"[{section}]\n")
            for key, val in values.items():
                out.write(f"{key} = {_SCHEMA[section][key][1](val)}\n")
            out.write("\n")
        return out.getvalue()

    @classmethod
    def from_flat(cls, flat: dict[str, dict[str, object]]) -> ExperimentConfig:
        base = cls().flat()
        for section, values in flat.items():
            base[section].update(values)
        d, m, t, o = base["data"], base["model"], base["train"], base["output"]
        center = tuple(d["center"])
        if d["id"] == "point_mass" and len(center) != d["dim"] and "center" not in flat.get("data", {}):
            center = (0.0,) * int(d["dim"])
        dataset = DatasetSpec(id=d["id"], dim=d["dim"], radius=d["radius"], sigma=d["sigma"],
                              center=center, conditional=d["conditional"])
        tc = TrainConfig(
            dataset=dataset, lam=t["lambda"], lr=t["lr"], betas=(t["beta1"], t["beta2"]),
            eps=t["eps"], weight_decay=t["weight_decay"], ema_decay=t["ema_decay"],
            grad_clip=t["grad_clip"], batch_size=t["batch_size"], steps=t["steps"],
            seed=t["seed"], eval_every=t["eval_every"],
            rectify_weighting=t["rectify_weighting"], rectify_sign=t["rectify_sign"],
            fake_target_zero=t["fake_target_zero"], base_weighting=t["base_weighting"],
            fm_fraction=t["fm_fraction"], hidden=m["hidden"], depth=m["depth"],
            n_freqs=m["n_freqs"], max_freq=m["max_freq"],
        )
        return cls(train=tc, output_dir=o["output_dir"], nfe_list=tuple(o["nfe_list"]),
                   plot=o["plot"], eval_samples=o["eval_samples"], n_proj=o["n_proj"])


def parse_config(text: str, env: dict[str, str] | None = None) -> ExperimentConfig:
    """Parse INI text; unknown sections or keys are errors.

    ``TWINFLOW_SEED`` in ``env`` (default: the process environment) replaces
    the seed given in the file.
    """
    env = os.environ if env is None else env
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    flat: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                flat.setdefault(section, {})[key] = _SCHEMA[section][key][0](raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    if env.get(SEED_ENV):
        try:
            flat.setdefault("train", {})["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    try:
        return ExperimentConfig.from_flat(flat)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, env: dict[str, str] | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, env)


# ---------------------------------------------------------------- checkpoints


def save_state(path, exp: ExperimentConfig, state: TrainState) -> None:
    meta = {
        "step": state.step,
        "rng": state.rng.bit_generator.state,
        "config": exp.to_ini(),
    }
    ckpt.save(path, exp.train.net, state.params, {
        "ema": ckpt.param_block(state.ema),
        "adam_m": ckpt.param_block(state.m),
        "adam_v": ckpt.param_block(state.v),
        "state": ckpt.json_block(meta),
    })


def load_state(path) -> tuple[ExperimentConfig, TrainState]:
    _, params, ext = ckpt.load(path)
    missing = {"ema", "adam_m", "adam_v", "state"} - set(ext)
    if missing:
        raise ckpt.CheckpointError(f"checkpoint lacks blocks {sorted(missing)}")
    meta = ckpt.read_json_block(ext["state"])
    exp = parse_config(meta["config"], env={})
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    state = TrainState(
        step=int(meta["step"]),
        params=params,
        ema=ckpt.read_param_block(ext["ema"]),
        m=ckpt.read_param_block(ext["adam_m"]),
        v=ckpt.read_param_block(ext["adam_v"]),
        rng=rng,
    )
    return exp, state


def checkpoint_name(step: int) -> str:
    return f"ckpt_{step:07d}.bin"


# ---------------------------------------------------------------- evaluation


def _labels(spec: DatasetSpec, n: int, rng: np.random.Generator):
    return rng.integers(0, spec.n_classes, size=n) if spec.n_classes else None


def evaluate_state(exp: ExperimentConfig, state: TrainState,
                   nfe_list=None) -> list[MetricsReport]:
    """Metrics at each NFE; the noise and reference set depend only on the seed."""
    cfg = exp.train
    nfe_list = exp.nfe_list if nfe_list is None else tuple(nfe_list)
    net = VelocityNet(cfg.net, state.sampling_params(cfg))
    ref, _ = sample_data(cfg.dataset, exp.eval_samples, np.random.default_rng([cfg.seed, 1]))
    rng = np.random.default_rng([cfg.seed, 2])
    c = _labels(cfg.dataset, exp.eval_samples, rng)
    runs = nfe_sweep(net, exp.eval_samples, nfe_list, rng, c)
    return [evaluate_samples(r.samples, ref, cfg.dataset, r.nfe, exp.n_proj, seed=cfg.seed)
            for r in runs]


def metric_row(step: int, rep: MetricsReport) -> tuple:
    return (step, rep.nfe, rep.sliced_w2, rep.energy_dist, rep.modes_recovered, rep.diversity)


def draw_samples(exp: ExperimentConfig, state: TrainState, n: int, nfe: int,
                 branch: str = "real", seed: int | None = None):
    cfg = exp.train
    net = VelocityNet(cfg.net, state.sampling_params(cfg))
    rng = np.random.default_rng([cfg.seed if seed is None else seed, 3])
    z = rng.standard_normal((n, cfg.dataset.dim))
    c = _labels(cfg.dataset, n, rng)
    return integrate(net, z, nfe, c, branch).samples, c


# ---------------------------------------------------------------- training runs


def _kept_rows(path: Path, upto: int) -> list[list[str]]:
    if not path.exists():
        return []
    _, rows = read_csv(path)
    return [r for r in rows if r and int(r[0]) <= upto]


def run_training(exp: ExperimentConfig, resume: str | os.PathLike | None = None) -> TrainState:
    """Train to ``exp.train.steps`` inside ``exp.output_dir``.

    Writes ``config.resolved``, ``loss.csv`` (streamed, one row per step),
    a checkpoint every ``eval_every`` steps plus one at the end, and a
    ``metrics.csv`` row for every (checkpoint, nfe) pair.  With ``plot`` on,
    each checkpoint also gets an SVG scatter at the smallest NFE.  When resuming,
    rows logged after the checkpoint's step are discarded first.
    """
    out = Path(exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(exp.to_ini())
    cfg = exp.train

    if resume is not None:
        saved, state = load_state(resume)
        if saved.train.net != cfg.net:
            raise ckpt.CheckpointError("checkpoint architecture does not match the config")
    else:
        state = TrainState.fresh(cfg)

    loss_path, metrics_path = out / "loss.csv", out / "metrics.csv"
    old_loss = _kept_rows(loss_path, state.step) if resume is not None else []
    old_metrics = _kept_rows(metrics_path, state.step) if resume is not None else []

    with open(loss_path, "w", newline="") as lf, open(metrics_path, "w", newline="") as mf:
        lw = csv.writer(lf, lineterminator="\n")
        mw = csv.writer(mf, lineterminator="\n")
        lw.writerow(LOSS_COLUMNS)
        lw.writerows(old_loss)
        mw.writerow(METRIC_COLUMNS)
        mw.writerows(old_metrics)

        def checkpoint_and_eval(st: TrainState):
            save_state(out / checkpoint_name(st.step), exp, st)
            if exp.plot:
                nfe = min(exp.nfe_list)
                pts, labels = draw_samples(exp, st, exp.eval_samples, nfe)
                write_scatter(out / f"samples_{st.step:07d}.svg", pts, labels,
                              title=f"step {st.step}, nfe={nfe}")
            for rep in evaluate_state(exp, st):
                mw.writerow([fmt(v) for v in metric_row(st.step, rep)])
            mf.flush()

        def on_step(st, br, norm):
            lw.writerow([fmt(v) for v in (st.step, br.base, br.adv, br.rectify, br.total, norm)])
            if cfg.eval_every and st.step % cfg.eval_every == 0:
                lf.flush()
                checkpoint_and_eval(st)

        try:
            state, _ = train(cfg, state, on_step=on_step)
        finally:
            lf.flush()
        if not cfg.eval_every or state.step % cfg.eval_every:
            checkpoint_and_eval(state)
    return state


def sweep_lambda(exp: ExperimentConfig, lambdas) -> list[tuple]:
    """One training run per lambda under ``output_dir/lambda_<i>``; writes sweep.csv."""
    out = Path(exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, lam in enumerate(lambdas):
        sub = replace(exp, train=replace(exp.train, lam=float(lam)),
                      output_dir=str(out / f"lambda_{i}"))
        state = run_training(sub)
        for rep in evaluate_state(sub, state):
            rows.append((float(lam), rep.nfe, rep.sliced_w2, rep.modes_recovered, rep.diversity))
        log.info("lambda %.4f done", lam)
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    return rows


def parse_lambdas(text: str) -> list[float]:
    try:
        vals = [float(Fraction(p.strip())) for p in text.split(",") if p.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad lambda list {text!r}") from exc
    if not vals:
        raise ConfigError("empty lambda list")
    return vals
