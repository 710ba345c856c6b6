"""Training objectives: the N=2 any-step base loss and the two twin-trajectory terms.

Every loss takes a network callable ``net(x, t, r, c, grad=...)`` (normally a
:class:`~twinflow.model.BoundNet`).  With ``grad=True`` it must return a
:class:`DiffValue`; with ``grad=False`` a plain array.  The metric ``d`` is the
squared Euclidean distance per sample, averaged over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue
from .transport import EPS_T, MIN_GAP, interpolate, sample_chain_n2, sample_times


class ResampleError(ValueError):
    """A base-loss time chain has ``t - t1`` too small to divide by."""


@dataclass(frozen=True)
class MixConfig:
    lam: float = 1.0 / 3.0
    metric: str = "squared_l2"
    rectify_weighting: str = "none"  # or "kl_weight"
    # Condition the fake-branch and velocity-difference evaluations on r=0
    # instead of r=t (the instantaneous velocity).
    fake_target_zero: bool = False
    # Per-sample weight on the base loss: "none" or "gap" = (t - t1) / t.
    base_weighting: str = "gap"
    # Share of the base subset trained with plain flow matching (r = t).
    fm_fraction: float = 0.25
    # Rectify target is sg(F + rectify_sign * dv).  -1 moves the one-jump
    # samples x_t - t*F along dv; +1 moves F itself along dv.
    rectify_sign: float = -1.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.metric != "squared_l2":
            raise ValueError(f"unsupported metric {self.metric!r}")
        if self.rectify_weighting not in ("none", "kl_weight"):
            raise ValueError(f"unknown rectify weighting {self.rectify_weighting!r}")
        if self.base_weighting not in ("none", "gap"):
            raise ValueError(f"unknown base weighting {self.base_weighting!r}")
        if not 0.0 <= self.fm_fraction <= 1.0:
            raise ValueError(f"fm_fraction must lie in [0, 1], got {self.fm_fraction}")
        if self.rectify_sign not in (-1.0, 1.0):
            raise ValueError("rectify_sign must be +1 or -1")


@dataclass
class LossBreakdown:
    base: float
    adv: float
    rectify: float
    total: float
    counts: dict[str, int] = field(default_factory=dict)
    loss: DiffValue | None = None  # the recorded total, for backward


def _rows(v: np.ndarray, d: int) -> np.ndarray:
    """Per-sample scalars repeated across ``d`` columns (elementwise ops need equal shapes)."""
    return np.repeat(np.asarray(v, dtype=np.float64)[:, None], d, axis=1)


def sq_l2(pred, target, weights=None) -> DiffValue:
    """Batch mean of ``w_i * ||pred_i - target_i||^2``."""
    diff = ad.sub(pred, target)
    n, d = diff.shape
    sq = ad.square(diff)
    if weights is not None:
        sq = ad.mul(_rows(weights, d), sq)
    return ad.scalar_mul(ad.sum_(sq), 1.0 / n)


def _fake_r(t, cfg: MixConfig):
    return np.zeros_like(t) if cfg.fake_target_zero else t


def base_loss_n2(net, x, z, c, t, chain, weighting: str = "none") -> DiffValue:
    """Any-step objective with two teacher hops.

    The student jumps from ``t`` straight to ``t3``; the no-grad teacher covers
    ``t1 -> t2 -> t3`` from exact interpolants.  Their difference, divided by
    ``t1 - t``, is regressed onto the straight-path velocity ``z - x``.
    ``weighting="gap"`` scales each sample by ``(t - t1) / t``, which tames the
    ``1 / (t - t1)`` blow-up of short first hops.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    t1, t2, t3 = (np.asarray(s, dtype=np.float64) for s in chain)
    if np.any(np.abs(t1 - t) < MIN_GAP):
        raise ResampleError("t - t1 below guard; resample the time chain")
    if weighting not in ("none", "gap"):
        raise ValueError(f"unknown base weighting {weighting!r}")
    n, d = x.shape
    u = z - x
    x_t = interpolate(x, z, t).x_t
    x_t1 = interpolate(x, z, t1).x_t
    x_t2 = interpolate(x, z, t2).x_t

    g = ad.mul(_rows(t3 - t, d), net(x_t, t, t3, c, grad=True))
    cc = None if c is None else np.concatenate([c, c])
    teach = net(
        np.concatenate([x_t1, x_t2]),
        np.concatenate([t1, t2]),
        np.concatenate([t2, t3]),
        cc,
        grad=False,
    )
    h = _rows(t2 - t1, d) * teach[:n] + _rows(t3 - t2, d) * teach[n:]
    pred = ad.mul(_rows(1.0 / (t1 - t), d), ad.sub(g, h))
    w = (t - t1) / t if weighting == "gap" else None
    return sq_l2(pred, u, w)


def flow_matching_loss(net, x, z, c, t) -> DiffValue:
    """Instantaneous-velocity regression ``d(A(x_t, t, t), z - x)``."""
    x_t = interpolate(x, z, t).x_t
    return sq_l2(net(x_t, t, t, c, grad=True), np.asarray(z) - np.asarray(x))


def make_fake(net, x, z, c, t, grad: bool = False):
    """One jump from ``x_t`` to the clean end: ``x_t - t * A(x_t, t, 0)``."""
    x_t = interpolate(x, z, t).x_t
    t = np.asarray(t, dtype=np.float64)
    n, d = x_t.shape
    f = net(x_t, t, np.zeros(n), c, grad=grad)
    if grad:
        return ad.sub(x_t, ad.mul(_rows(t, d), f))
    return x_t - _rows(t, d) * f


def _fake_point(x_fake, z_fake, t_prime) -> np.ndarray:
    return interpolate(x_fake, z_fake, t_prime).x_t


def adv_loss(net, x_fake, z_fake, c, t_prime, cfg: MixConfig | None = None) -> DiffValue:
    """Flow matching on the fake trajectory, conditioned on negative time."""
    cfg = cfg or MixConfig()
    x_fake = ad.stop_gradient(x_fake).data
    z_fake = np.asarray(z_fake, dtype=np.float64)
    t_prime = np.asarray(t_prime, dtype=np.float64)
    x_pt = _fake_point(x_fake, z_fake, t_prime)
    pred = net(x_pt, -t_prime, -_fake_r(t_prime, cfg), c, grad=True)
    return sq_l2(pred, z_fake - x_fake)


def velocity_diff(net, x_pt, t_prime, c, cfg: MixConfig | None = None) -> np.ndarray:
    """``A(x, -t', -t') - A(x, t', t')``, both without gradient."""
    cfg = cfg or MixConfig()
    x_pt = np.asarray(x_pt, dtype=np.float64)
    t_prime = np.asarray(t_prime, dtype=np.float64)
    n = x_pt.shape[0]
    r = _fake_r(t_prime, cfg)
    cc = None if c is None else np.concatenate([c, c])
    both = net(
        np.concatenate([x_pt, x_pt]),
        np.concatenate([-t_prime, t_prime]),
        np.concatenate([-r, r]),
        cc,
        grad=False,
    )
    return both[:n] - both[n:]


def _rectify_weights(t_prime, cfg: MixConfig):
    if cfg.rectify_weighting == "none":
        return None
    if np.any(t_prime < EPS_T):
        raise ValueError(f"KL weight (1-t')/t' is singular for t' < {EPS_T}")
    return (1.0 - t_prime) / t_prime


def rectify_loss(net, x, z, c, t, z_fake, t_prime, cfg: MixConfig | None = None) -> DiffValue:
    """Regress the live one-jump velocity onto ``sg(F + sign * dv)``.

    With ``sign=+1`` the gradient is ``-(2/B) sum_i dv_i . dF_i/dtheta``, so
    descent moves ``F`` along the fake-minus-real velocity difference measured
    at the generator's own re-noised outputs.  The default ``sign=-1`` moves
    ``F`` the other way, which pushes ``x_t - t*F`` along ``dv``.
    """
    cfg = cfg or MixConfig()
    x_t = interpolate(x, z, t).x_t
    t = np.asarray(t, dtype=np.float64)
    t_prime = np.asarray(t_prime, dtype=np.float64)
    n, d = x_t.shape
    f_live = net(x_t, t, np.zeros(n), c, grad=True)
    x_fake = ad.sub(x_t, ad.mul(_rows(t, d), f_live))
    x_pt = _fake_point(ad.stop_gradient(x_fake).data, z_fake, t_prime)
    dv = velocity_diff(net, x_pt, t_prime, c, cfg)
    target = ad.stop_gradient(f_live).data + cfg.rectify_sign * dv
    return sq_l2(f_live, target, _rectify_weights(t_prime, cfg))


def _twin_losses(net, x, z, c, t, z_fake, t_prime, cfg: MixConfig):
    """Adversarial and rectification terms sharing one set of evaluations.

    Equivalent to ``adv_loss(make_fake(...))`` plus ``rectify_loss(...)`` with
    the same draws; the fake-branch forward of the adversarial term doubles as
    the fake half of the velocity difference.
    """
    x_t = interpolate(x, z, t).x_t
    n, d = x_t.shape
    f_live = net(x_t, t, np.zeros(n), c, grad=True)
    x_fake = x_t - _rows(t, d) * f_live.data
    x_pt = _fake_point(x_fake, z_fake, t_prime)
    r = _fake_r(t_prime, cfg)

    v_fake = net(x_pt, -t_prime, -r, c, grad=True)
    adv = sq_l2(v_fake, z_fake - x_fake)

    v_real = net(x_pt, t_prime, r, c, grad=False)
    dv = v_fake.data - v_real
    rect = sq_l2(f_live, f_live.data + cfg.rectify_sign * dv, _rectify_weights(t_prime, cfg))
    return adv, rect


@dataclass
class Batch:
    x: np.ndarray
    z: np.ndarray
    labels: np.ndarray | None = None


def split_sizes(lam: float, batch_size: int) -> tuple[int, int]:
    """(TwinFlow samples, base samples) with the TwinFlow share rounded up."""
    # guard against 1/3 * 12 = 4.000000000000001
    n_twin = min(batch_size, math.ceil(lam * batch_size - 1e-9))
    return n_twin, batch_size - n_twin


def _sub(c, sl):
    return None if c is None else c[sl]


def mixed_step_loss(net, batch: Batch, cfg: MixConfig, rng: np.random.Generator) -> LossBreakdown:
    """Total loss for one mini-batch split between the TwinFlow and base objectives.

    The first ``ceil(lam * B)`` rows go to the twin terms.  Of the remaining
    base rows, the last ``round(fm_fraction * n_base)`` use plain flow
    matching and the rest the two-hop objective; the base value is their
    row-weighted mean.
    """
    x, z, c = batch.x, batch.z, batch.labels
    bsz = x.shape[0]
    if bsz < 2:
        raise ValueError("mixed batch needs at least two samples")
    n_twin, n_base = split_sizes(cfg.lam, bsz)

    zero = ad.constant(0.0)
    base = adv = rect = zero
    if n_twin:
        sl = slice(0, n_twin)
        t = sample_times(rng, n_twin, EPS_T)
        t_prime = sample_times(rng, n_twin, EPS_T)
        z_fake = rng.standard_normal((n_twin, x.shape[1]))
        adv, rect = _twin_losses(
            net, x[sl], z[sl], _sub(c, sl), t, z_fake, t_prime, cfg
        )
    if n_base:
        n_fm = int(round(cfg.fm_fraction * n_base))
        n_any = n_base - n_fm
        parts = []
        if n_any:
            sl = slice(n_twin, n_twin + n_any)
            t = sample_times(rng, n_any, EPS_T)
            chain = sample_chain_n2(rng, t)
            loss = base_loss_n2(net, x[sl], z[sl], _sub(c, sl), t, chain, cfg.base_weighting)
            parts.append(ad.scalar_mul(loss, n_any / n_base))
        if n_fm:
            sl = slice(n_twin + n_any, bsz)
            t = sample_times(rng, n_fm, EPS_T)
            loss = flow_matching_loss(net, x[sl], z[sl], _sub(c, sl), t)
            parts.append(ad.scalar_mul(loss, n_fm / n_base))
        base = parts[0] if len(parts) == 1 else ad.add(parts[0], parts[1])

    total = ad.add(ad.add(base, adv), rect)
    return LossBreakdown(
        base=base.item(),
        adv=adv.item(),
        rectify=rect.item(),
        total=total.item(),
        counts={"twin": n_twin, "base": n_base},
        loss=total,
    )
