"""Central finite-difference checks for every autodiff primitive and a small MLP."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape

FD_EPS = 1e-5


@dataclass
class CaseResult:
    name: str
    rel_err: float


def numeric_grad(f: Callable[[list[np.ndarray]], float], inputs: list[np.ndarray],
                 eps: float = FD_EPS) -> list[np.ndarray]:
    grads = []
    for k, x in enumerate(inputs):
        g = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp = [a.copy() for a in inputs]
            xm = [a.copy() for a in inputs]
            xp[k][idx] += eps
            xm[k][idx] -= eps
            g[idx] = (f(xp) - f(xm)) / (2.0 * eps)
        grads.append(g)
    return grads


def autodiff_grad(build: Callable[[list], ad.DiffValue], inputs: list[np.ndarray]) -> list[np.ndarray]:
    tape = Tape()
    leaves = [tape.leaf(x) for x in inputs]
    grads = tape.backward(build(leaves))
    return [grads[v.node_id] for v in leaves]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm error relative to the larger of the two max-norms."""
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def check(name: str, build, inputs: list[np.ndarray]) -> CaseResult:
    def f(xs):
        return build([ad.constant(x) for x in xs]).item()

    got = autodiff_grad(build, inputs)
    want = numeric_grad(f, inputs)
    err = max(relative_error(g, w) for g, w in zip(got, want))
    return CaseResult(name, err)


def _readout(out: ad.DiffValue, weights: np.ndarray) -> ad.DiffValue:
    # random linear functional keeps every output element's cotangent distinct
    return ad.sum_(ad.mul(weights, out))


def _primitive_case(kind: str, rng: np.random.Generator) -> CaseResult:
    n, m, k = (int(v) for v in rng.integers(1, 5, size=3))
    a = rng.standard_normal((n, m))
    b = rng.standard_normal((n, m))
    w = rng.standard_normal((n, m))
    s = float(rng.standard_normal())
    if kind == "add":
        return check(kind, lambda v: _readout(ad.add(v[0], v[1]), w), [a, b])
    if kind == "add_scalar":
        return check(kind, lambda v: _readout(ad.add(v[0], v[1]), w), [a, np.array([s])])
    if kind == "sub":
        return check(kind, lambda v: _readout(ad.sub(v[0], v[1]), w), [a, b])
    if kind == "scalar_mul":
        return check(kind, lambda v: _readout(ad.scalar_mul(v[0], s), w), [a])
    if kind == "elementwise_mul":
        return check(kind, lambda v: _readout(ad.mul(v[0], v[1]), w), [a, b])
    if kind == "matmul":
        c = rng.standard_normal((m, k))
        wo = rng.standard_normal((n, k))
        return check(kind, lambda v: _readout(ad.matmul(v[0], v[1]), wo), [a, c])
    if kind == "affine":
        W = rng.standard_normal((m, k))
        bias = rng.standard_normal(k)
        wo = rng.standard_normal((n, k))
        return check(kind, lambda v: _readout(ad.affine(v[0], v[1], v[2]), wo), [W, bias, a])
    if kind == "tanh":
        return check(kind, lambda v: _readout(ad.tanh(v[0]), w), [a])
    if kind == "silu":
        return check(kind, lambda v: _readout(ad.silu(v[0]), w), [2.0 * a])
    if kind == "square":
        return check(kind, lambda v: _readout(ad.square(v[0]), w), [a])
    if kind == "sum":
        return check(kind, lambda v: ad.scalar_mul(ad.sum_(v[0]), s), [a])
    if kind == "mean":
        return check(kind, lambda v: ad.scalar_mul(ad.mean(v[0]), s), [a])
    if kind == "concat_rows":
        c = rng.standard_normal((k, m))
        wo = rng.standard_normal((n + k, m))
        return check(kind, lambda v: _readout(ad.concat_rows(v[0], v[1]), wo), [a, c])
    raise ValueError(kind)


PRIMITIVES = (
    "add", "add_scalar", "sub", "scalar_mul", "elementwise_mul", "matmul", "affine",
    "tanh", "silu", "square", "sum", "mean", "concat_rows",
)


def _mlp_case(rng: np.random.Generator) -> CaseResult:
    """Three affine layers with silu/tanh, squared-error loss; gradient in all weights."""
    n, d_in, h = 4, 2, 5
    x = rng.standard_normal((n, d_in))
    y = rng.standard_normal((n, d_in))
    shapes = [(d_in, h), (h,), (h, h), (h,), (h, d_in), (d_in,)]
    params = [rng.standard_normal(s) / np.sqrt(s[0]) for s in shapes]

    def build(p):
        z = ad.silu(ad.affine(p[0], p[1], x))
        z = ad.tanh(ad.affine(p[2], p[3], z))
        out = ad.affine(p[4], p[5], z)
        return ad.mean(ad.square(ad.sub(out, y)))

    return check("mlp3", build, params)


def run(n_cases: int = 100, seed: int = 0) -> list[CaseResult]:
    """Cycle through the primitives, with every eighth case a 3-layer MLP."""
    rng = np.random.default_rng(seed)
    results = []
    for i in range(n_cases):
        if i % 8 == 7:
            results.append(_mlp_case(rng))
        else:
            results.append(_primitive_case(PRIMITIVES[i % len(PRIMITIVES)], rng))
    return results


def max_relative_error(results: list[CaseResult]) -> float:
    return max(r.rel_err for r in results)
