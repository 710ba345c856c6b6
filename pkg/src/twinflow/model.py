"""The shared average-velocity network ``A(x, t, r[, c])``.

One set of weights serves every role: multi-step velocity field (``r = t``),
few-step jump predictor (``r < t``) and, through negative time inputs, the
fake branch of the twin trajectory.  Time and target time are embedded with
separate parameter sets from raw *signed* sinusoidal features so that ``t``
and ``-t`` stay distinguishable.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue, Tape

ParamSnapshot = dict[str, np.ndarray]


@dataclass(frozen=True)
class NetConfig:
    data_dim: int = 2
    hidden: int = 256
    depth: int = 4
    n_classes: int = 0
    n_freqs: int = 64
    max_freq: float = 1000.0
    seed: int = 0


@functools.lru_cache(maxsize=16)
def _frequencies(n_freqs: int, max_freq: float) -> np.ndarray:
    freqs = np.geomspace(1.0, max_freq, n_freqs)
    freqs.flags.writeable = False
    return freqs


def time_features(t: np.ndarray, n_freqs: int, max_freq: float = 1000.0) -> np.ndarray:
    """Sin/cos features of signed times; frequencies spaced geometrically in [1, max_freq]."""
    freqs = _frequencies(n_freqs, float(max_freq))
    arg = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def param_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    h, d, nf = cfg.hidden, cfg.data_dim, 2 * cfg.n_freqs
    shapes = {
        "input_proj.w": (d, h),
        "input_proj.b": (h,),
        "time_embed.w": (nf, h),
        "time_embed.b": (h,),
        "target_embed.w": (nf, h),
        "target_embed.b": (h,),
    }
    if cfg.n_classes > 0:
        shapes["class_embed.w"] = (cfg.n_classes, h)
    for i in range(cfg.depth):
        shapes[f"hidden.{i}.w"] = (h, h)
        shapes[f"hidden.{i}.b"] = (h,)
    shapes["output_proj.w"] = (h, d)
    shapes["output_proj.b"] = (d,)
    return shapes


def init_params(cfg: NetConfig, rng: np.random.Generator | None = None) -> ParamSnapshot:
    """Weights ~ U(+-1/sqrt(fan_in)), biases zero, output layer all zero."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    params: ParamSnapshot = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b") or name.startswith("output_proj"):
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def _times(t, n: int) -> np.ndarray:
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"time batch has shape {arr.shape}, expected ({n},)")
    if np.any(np.abs(arr) > 1.0):
        raise ValueError("time inputs must lie in [-1, 1]")
    return arr


class VelocityNet:
    """Architecture plus a live parameter dictionary."""

    def __init__(self, cfg: NetConfig, params: ParamSnapshot | None = None):
        self.cfg = cfg
        self.params = init_params(cfg) if params is None else params
        expected = set(param_shapes(cfg))
        if set(self.params) != expected:
            raise ValueError(f"parameter names {sorted(self.params)} do not match architecture")

    def with_params(self, params: ParamSnapshot) -> VelocityNet:
        return VelocityNet(self.cfg, params)

    def forward(self, p: dict[str, DiffValue], x, t, r, c=None) -> DiffValue:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.cfg.data_dim:
            raise ValueError(f"expected x of shape (n, {self.cfg.data_dim}), got {x.shape}")
        n = x.shape[0]
        tf = time_features(_times(t, n), self.cfg.n_freqs, self.cfg.max_freq)
        rf = time_features(_times(r, n), self.cfg.n_freqs, self.cfg.max_freq)

        h = ad.affine(p["input_proj.w"], p["input_proj.b"], x)
        h = h + ad.affine(p["time_embed.w"], p["time_embed.b"], tf)
        h = h + ad.affine(p["target_embed.w"], p["target_embed.b"], rf)
        if c is not None:
            if self.cfg.n_classes == 0:
                raise ValueError("labels given to an unconditional network")
            onehot = np.eye(self.cfg.n_classes)[np.asarray(c, dtype=np.int64)]
            h = h + ad.matmul(onehot, p["class_embed.w"])
        for i in range(self.cfg.depth):
            h = ad.silu(ad.affine(p[f"hidden.{i}.w"], p[f"hidden.{i}.b"], h))
        return ad.affine(p["output_proj.w"], p["output_proj.b"], h)

    def __call__(self, x, t, r, c=None, grad: bool = False) -> np.ndarray:
        """Gradient-free evaluation (the stop-gradient copy of the weights)."""
        if grad:
            raise TypeError("grad=True needs a network bound to a tape")
        consts = {k: DiffValue(v) for k, v in self.params.items()}
        return self.forward(consts, x, t, r, c).data

    def bind(self, tape: Tape) -> BoundNet:
        return BoundNet(self, tape)


class BoundNet:
    """A network whose parameters are leaves on one tape.

    ``bound(x, t, r, c)`` records the evaluation; ``bound(..., grad=False)``
    evaluates the same weights as constants and returns a plain array.
    """

    def __init__(self, net: VelocityNet, tape: Tape):
        self.net = net
        self.tape = tape
        self.leaves = {k: tape.leaf(v) for k, v in net.params.items()}

    @property
    def cfg(self) -> NetConfig:
        return self.net.cfg

    def __call__(self, x, t, r, c=None, grad: bool = True):
        if grad:
            return self.net.forward(self.leaves, x, t, r, c)
        return self.net(x, t, r, c)

    def grads(self, node_grads: dict[int, np.ndarray]) -> dict[str, np.ndarray]:
        return {k: node_grads[v.node_id] for k, v in self.leaves.items()}


def evaluate(net: VelocityNet | BoundNet, x, t, r, c=None, grad: bool = False):
    """Evaluate ``A(x, t, r, c)``; ``grad=True`` requires a tape-bound network."""
    if grad:
        if not isinstance(net, BoundNet):
            raise TypeError("grad=True needs a network bound to a tape")
        return net(x, t, r, c, grad=True)
    if isinstance(net, BoundNet):
        return net(x, t, r, c, grad=False)
    return net(x, t, r, c)


def ema_update(ema: ParamSnapshot, live: ParamSnapshot, decay: float) -> ParamSnapshot:
    if not 0.0 <= decay < 1.0:
        raise ValueError(f"EMA decay must lie in [0, 1), got {decay}")
    if set(ema) != set(live):
        raise ValueError("EMA and live parameter names differ")
    out = {}
    for k, e in ema.items():
        if e.shape != live[k].shape:
            raise ValueError(f"{k}: EMA shape {e.shape} != live shape {live[k].shape}")
        out[k] = decay * e + (1.0 - decay) * live[k]
    return out


def copy_params(p: ParamSnapshot) -> ParamSnapshot:
    return {k: v.copy() for k, v in p.items()}


def param_count(p: ParamSnapshot) -> int:
    return sum(v.size for v in p.values())
