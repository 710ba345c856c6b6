"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured
numbers.  The ring8 quality checks share six 5000-step training runs
(lambda in {0, 1/3} x seeds {0, 1, 2}), so this module takes roughly ten
minutes on one CPU core.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from twinflow import autodiff as ad
from twinflow import cli, gradcheck
from twinflow.autodiff import Tape
from twinflow.data import DatasetSpec, analytic_score, oracle_velocity, sample_data
from twinflow.experiment import evaluate_state, load_config
from twinflow.losses import (
    MixConfig, adv_loss, base_loss_n2, make_fake, rectify_loss, velocity_diff,
)
from twinflow.metrics import diversity
from twinflow.model import NetConfig, VelocityNet, copy_params, param_count, param_shapes
from twinflow.trainer import train
from twinflow.transport import EPS_T, interpolate, sample_chain_n2, sample_times, velocity_to_score

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parents[1]
PRESET = ROOT / "configs" / "ring8_twinflow.ini"
SEEDS = (0, 1, 2)


@pytest.fixture
def report(capsys):
    def emit(ok: bool, label: str, detail: str) -> bool:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}", flush=True)
        return ok

    return emit


# ---------------------------------------------------------------- 1


def test_c1_gradcheck(report):
    t0 = time.perf_counter()
    results = gradcheck.run(100, seed=0)
    elapsed = time.perf_counter() - t0
    err = gradcheck.max_relative_error(results)
    kinds = {r.name for r in results}
    ok = len(results) == 100 and err < 1e-4 and elapsed < 10 and "mlp3" in kinds \
        and set(gradcheck.PRIMITIVES) <= kinds
    assert report(ok, "C1 finite-difference gradients",
                  f"{len(results)} cases, max rel err {err:.2e}, {elapsed:.2f}s")


# ---------------------------------------------------------------- 2


def test_c2_velocity_to_score(report):
    rng = np.random.default_rng(0)
    worst = 0.0
    for spec in (DatasetSpec("gauss_unit"), DatasetSpec("point_mass", center=(0.5, -1.0))):
        for t in np.arange(1, 10) / 10:
            x, _ = sample_data(spec, 1000, rng)
            x_t = interpolate(x, rng.standard_normal(x.shape), t).x_t
            got = velocity_to_score(x_t, t, oracle_velocity(spec, x_t, t))
            want = analytic_score(spec, x_t, t)
            worst = max(worst, float(np.max(np.abs(got - want))))
    assert report(worst < 1e-10, "C2 velocity-to-score map", f"max abs error {worst:.2e}")


# ---------------------------------------------------------------- 3


class _PointMass:
    def __init__(self, real, fake):
        self.real = DatasetSpec("point_mass", center=real)
        self.fake = DatasetSpec("point_mass", center=fake)
        self.tape = Tape()

    def __call__(self, x, t, r, c=None, grad=True):
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(x),))
        out = np.empty_like(x)
        pos = t >= 0
        out[pos] = oracle_velocity(self.real, x[pos], t[pos])
        out[~pos] = oracle_velocity(self.fake, x[~pos], -t[~pos])
        return ad.add(self.tape.leaf(np.zeros_like(out)), out) if grad else out


def test_c3_oracle_zeros(report):
    rng = np.random.default_rng(1)
    real, fake = (1.0, -2.0), (-0.5, 0.25)
    net = _PointMass(real, fake)
    n = 500
    x, z = np.tile(real, (n, 1)), rng.standard_normal((n, 2))
    t = sample_times(rng, n, EPS_T)
    base = max(abs(base_loss_n2(net, x, z, None, t, sample_chain_n2(rng, t), w).item())
               for w in ("none", "gap"))
    adv = abs(adv_loss(net, np.tile(fake, (n, 1)), rng.standard_normal((n, 2)), None,
                       sample_times(rng, n, EPS_T)).item())

    cfg = NetConfig(hidden=16, depth=2, n_freqs=6, max_freq=50.0)
    p = {k: rng.standard_normal(s) for k, s in param_shapes(cfg).items()}
    for name in ("time_embed.w", "target_embed.w"):
        p[name][: cfg.n_freqs] = 0.0  # cosine features only: even in t and r
    sym = VelocityNet(cfg, p)
    rect = [
        rectify_loss(sym.bind(Tape()), x, z, None, t, rng.standard_normal((n, 2)),
                     sample_times(rng, n, EPS_T), MixConfig(rectify_sign=s)).item()
        for s in (1.0, -1.0)
    ]
    ok = base < 1e-10 and adv < 1e-10 and all(r == 0.0 for r in rect)
    assert report(ok, "C3 losses vanish at their optimum",
                  f"base {base:.1e}, adv {adv:.1e}, symmetric-net rectify {rect}")


# ---------------------------------------------------------------- 4


def _rectify_rel_error(seed: int) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    cfg = NetConfig(hidden=2, depth=1, n_freqs=1, max_freq=3.0)
    net = VelocityNet(cfg, {k: rng.standard_normal(s) for k, s in param_shapes(cfg).items()})
    assert param_count(net.params) <= 50
    n = int(rng.integers(2, 6))
    x, z = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
    t, tp = sample_times(rng, n, EPS_T), sample_times(rng, n, EPS_T)
    zf = rng.standard_normal((n, 2))
    mix = MixConfig(rectify_sign=1.0)
    names = list(net.params)

    tape = Tape()
    bound = net.bind(tape)
    g = bound.grads(tape.backward(rectify_loss(bound, x, z, None, t, zf, tp, mix)))
    got = np.concatenate([g[k].ravel() for k in names])

    x_t = interpolate(x, z, t).x_t
    dv = velocity_diff(net, interpolate(make_fake(net, x, z, None, t), zf, tp).x_t, tp, None, mix)
    want = np.zeros_like(got)
    for i in range(n):
        for j in range(2):
            tape = Tape()
            bound = net.bind(tape)
            sel = np.zeros((n, 2))
            sel[i, j] = 1.0
            jac = bound.grads(tape.backward(ad.sum_(ad.mul(sel, bound(x_t, t, np.zeros(n))))))
            want -= (2.0 / n) * dv[i, j] * np.concatenate([jac[k].ravel() for k in names])
    err = float(np.max(np.abs(got - want)) / np.max(np.abs(want)))
    return err, float(got @ want)


def test_c4_rectify_gradient_structure(report):
    results = [_rectify_rel_error(s) for s in range(100)]
    worst = max(e for e, _ in results)
    aligned = all(ip > 0 for _, ip in results)
    assert report(worst < 1e-8 and aligned, "C4 rectify gradient = -(2/B) sum dv . dF/dtheta",
                  f"100 configs, max rel err {worst:.2e}, all aligned: {aligned}")


# ---------------------------------------------------------------- 5, 6, 7


@pytest.fixture(scope="module")
def ring8_runs():
    """Final-checkpoint metrics for lambda in {0, 1/3} and three seeds."""
    exp = load_config(PRESET, env={})
    out = {}
    t0 = time.perf_counter()
    for lam in (0.0, 1.0 / 3.0):
        for seed in SEEDS:
            cfg = replace(exp.train, lam=lam, seed=seed)
            state, _ = train(cfg)
            reps = evaluate_state(replace(exp, train=cfg), state, (1, 8))
            out[(lam, seed)] = {r.nfe: r for r in reps}
    elapsed = time.perf_counter() - t0
    ref, _ = sample_data(exp.train.dataset, exp.eval_samples, np.random.default_rng([0, 1]))
    return out, elapsed, diversity(ref, rng=np.random.default_rng(0))


def _median(runs, lam, nfe, field):
    return float(np.median([getattr(runs[(lam, s)][nfe], field) for s in SEEDS]))


def test_c5_twin_terms_improve_one_step_samples(ring8_runs, report):
    runs, elapsed, _ = ring8_runs
    sw_twin = _median(runs, 1 / 3, 1, "sliced_w2")
    sw_base = _median(runs, 0.0, 1, "sliced_w2")
    modes = _median(runs, 1 / 3, 1, "modes_recovered")
    per_seed = [runs[(1 / 3, s)][1].modes_recovered for s in SEEDS]
    ok = sw_twin < sw_base and modes >= 7 and elapsed < 600
    assert report(ok, "C5 ring8 1-NFE, lambda=1/3 vs 0",
                  f"median sw2 {sw_twin:.4f} vs {sw_base:.4f}, median modes {modes:g} "
                  f"(per seed {per_seed}), six runs in {elapsed:.0f}s")


def test_c6_one_step_diversity(ring8_runs, report):
    runs, _, data_div = ring8_runs
    div = _median(runs, 1 / 3, 1, "diversity")
    ratio = div / data_div
    assert report(ratio >= 0.5, "C6 1-NFE diversity",
                  f"{div:.3f} vs data {data_div:.3f} (ratio {ratio:.2f}, floor 0.5, hard floor 0.1)")


def test_c7_more_steps_help_base_model(ring8_runs, report):
    runs, _, _ = ring8_runs
    sw1 = _median(runs, 0.0, 1, "sliced_w2")
    sw8 = _median(runs, 0.0, 8, "sliced_w2")
    assert report(sw8 <= sw1, "C7 lambda=0 sw2 at NFE 8 <= NFE 1", f"{sw8:.4f} vs {sw1:.4f}")


# ---------------------------------------------------------------- 8, 9

_SMALL = """
[data]
id = ring8
[model]
hidden = 16
depth = 2
n_freqs = 8
[train]
lr = 1e-3
batch_size = 32
steps = 40
seed = 7
eval_every = 20
[output]
output_dir = {out}
nfe_list = 1, 2, 4, 8
eval_samples = 200
n_proj = 32
"""


def _config(tmp_path, name):
    path = tmp_path / f"{name}.ini"
    path.write_text(_SMALL.format(out=tmp_path / name))
    return path


def test_c8_determinism_and_resume(tmp_path, report, monkeypatch):
    monkeypatch.delenv("TWINFLOW_SEED", raising=False)
    codes = [cli.main(["train", "--config", str(_config(tmp_path, n))]) for n in ("a", "b")]
    same = (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()

    ck = tmp_path / "b" / "ckpt_0000020.bin"
    codes.append(cli.main(["train", "--config", str(_config(tmp_path, "b")), "--resume", str(ck)]))
    resumed = (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()
    ok = codes == [0, 0, 0] and same and resumed
    assert report(ok, "C8 reproducible training",
                  f"identical loss.csv: {same}, resume from step 20 bitwise: {resumed}")


def test_c9_lambda_sweep(tmp_path, report, monkeypatch):
    monkeypatch.delenv("TWINFLOW_SEED", raising=False)
    cfg = _config(tmp_path, "sweep")
    code = cli.main(["sweep-lambda", "--config", str(cfg), "--lambdas", "0,1/6,1/3,1/2,2/3"])
    with open(tmp_path / "sweep" / "sweep.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    lams = sorted({float(r[0]) for r in body})
    finite = all(math.isfinite(float(v)) for r in body for v in (r[0], r[2], r[4]))
    ok = (code == 0 and header == ["lambda", "nfe", "sliced_w2", "modes", "diversity"]
          and len(body) == 5 * 4 and np.allclose(lams, [0, 1 / 6, 1 / 3, 1 / 2, 2 / 3]) and finite)
    assert report(ok, "C9 lambda sweep", f"{len(body)} rows over lambdas {[round(v, 4) for v in lams]}")
