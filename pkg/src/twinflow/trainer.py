"""Optimisation loop: data -> mixed loss -> backward -> clip -> Adam -> EMA."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Tape
from .data import DatasetSpec, sample_data
from .losses import Batch, LossBreakdown, MixConfig, mixed_step_loss
from .model import NetConfig, ParamSnapshot, VelocityNet, copy_params, ema_update, init_params

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "base", "adv", "rectify", "total", "grad_norm")


class DivergenceError(RuntimeError):
    def __init__(self, step: int, breakdown: LossBreakdown):
        self.step = step
        self.breakdown = breakdown
        super().__init__(
            f"non-finite loss at step {step}: base={breakdown.base} "
            f"adv={breakdown.adv} rectify={breakdown.rectify}"
        )


@dataclass
class TrainConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    lam: float = 1.0 / 3.0
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    weight_decay: float = 0.0
    ema_decay: float = 0.99
    batch_size: int = 256
    steps: int = 1000
    seed: int = 42
    eval_every: int = 0
    rectify_weighting: str = "none"
    rectify_sign: float = -1.0
    fake_target_zero: bool = False
    base_weighting: str = "gap"
    fm_fraction: float = 0.25
    grad_clip: float | None = 1.0
    hidden: int = 256
    depth: int = 4
    n_freqs: int = 64
    max_freq: float = 1000.0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")
        self.mix  # validates lambda and weighting

    @property
    def mix(self) -> MixConfig:
        return MixConfig(
            lam=self.lam,
            rectify_weighting=self.rectify_weighting,
            fake_target_zero=self.fake_target_zero,
            base_weighting=self.base_weighting,
            fm_fraction=self.fm_fraction,
            rectify_sign=self.rectify_sign,
        )

    @property
    def net(self) -> NetConfig:
        return NetConfig(
            data_dim=self.dataset.dim,
            hidden=self.hidden,
            depth=self.depth,
            n_classes=self.dataset.n_classes,
            n_freqs=self.n_freqs,
            max_freq=self.max_freq,
            seed=self.seed,
        )


@dataclass
class TrainState:
    step: int
    params: ParamSnapshot
    ema: ParamSnapshot
    m: ParamSnapshot
    v: ParamSnapshot
    rng: np.random.Generator

    @classmethod
    def fresh(cls, cfg: TrainConfig) -> TrainState:
        rng = np.random.default_rng(cfg.seed)
        params = init_params(cfg.net, rng)
        return cls(
            step=0,
            params=params,
            ema=copy_params(params),
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            rng=rng,
        )

    def sampling_params(self, cfg: TrainConfig) -> ParamSnapshot:
        """EMA weights when EMA is on, live weights otherwise."""
        return self.ema if cfg.ema_decay > 0 else self.params


def adam_step(params, grads, m, v, lr, betas=(0.9, 0.95), eps=1e-8, t_step=1, weight_decay=0.0):
    """Bias-corrected Adam with decoupled weight decay; updates the dicts in place."""
    b1, b2 = betas
    bc1 = 1.0 - b1**t_step
    bc2 = 1.0 - b2**t_step
    for k, p in params.items():
        g = grads[k]
        m[k] *= b1
        m[k] += (1.0 - b1) * g
        v[k] *= b2
        v[k] += (1.0 - b2) * (g * g)
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + eps)
    return params, m, v


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_grads(grads: dict[str, np.ndarray], max_norm: float | None) -> tuple[dict, float]:
    """Rescale so the global norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def draw_batch(cfg: TrainConfig, rng: np.random.Generator) -> Batch:
    x, labels = sample_data(cfg.dataset, cfg.batch_size, rng)
    z = rng.standard_normal(x.shape)
    return Batch(x=x, z=z, labels=labels if cfg.dataset.conditional else None)


def train_step(cfg: TrainConfig, state: TrainState) -> tuple[LossBreakdown, float]:
    net = VelocityNet(cfg.net, state.params)
    tape = Tape()
    bound = net.bind(tape)
    batch = draw_batch(cfg, state.rng)
    br = mixed_step_loss(bound, batch, cfg.mix, state.rng)
    if not math.isfinite(br.total):
        raise DivergenceError(state.step + 1, br)
    grads = bound.grads(tape.backward(br.loss))
    grads, norm = clip_grads(grads, cfg.grad_clip)
    state.step += 1
    adam_step(
        state.params, grads, state.m, state.v, cfg.lr, cfg.betas, cfg.eps,
        state.step, cfg.weight_decay,
    )
    state.ema = ema_update(state.ema, state.params, cfg.ema_decay)
    br.loss = None
    return br, norm


def train(
    cfg: TrainConfig,
    state: TrainState | None = None,
    steps: int | None = None,
    on_step: Callable[[TrainState, LossBreakdown, float], None] | None = None,
) -> tuple[TrainState, list[tuple]]:
    """Run ``steps`` optimisation steps (default: up to ``cfg.steps``).

    Returns the final state and one loss-log row per step, laid out as
    :data:`LOSS_COLUMNS`.
    """
    if state is None:
        state = TrainState.fresh(cfg)
    if steps is None:
        steps = cfg.steps - state.step
    rows = []
    for _ in range(steps):
        br, norm = train_step(cfg, state)
        rows.append((state.step, br.base, br.adv, br.rectify, br.total, norm))
        if on_step is not None:
            on_step(state, br, norm)
        if state.step % 500 == 0:
            log.info("step %d total %.5f base %.5f adv %.5f rect %.5f",
                     state.step, br.total, br.base, br.adv, br.rectify)
    return state, rows
