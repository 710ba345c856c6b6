"""Sample-quality metrics: sliced W2, energy distance, ring8 mode coverage, diversity."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import DatasetSpec, ring8_centers


@dataclass
class MetricsReport:
    sliced_w2: float
    energy_dist: float
    modes_recovered: int | None
    diversity: float
    nfe: int

    def as_row(self) -> dict:
        return asdict(self)


def random_directions(d: int, n_proj: int, rng: np.random.Generator) -> np.ndarray:
    w = rng.standard_normal((n_proj, d))
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def _w2_1d_sorted(a: np.ndarray, b: np.ndarray) -> float:
    """Squared W2 between two sorted 1-D empirical distributions."""
    if a.size == b.size:
        return float(np.mean((a - b) ** 2))
    # quantile functions on a common midpoint grid
    m = max(a.size, b.size)
    q = (np.arange(m) + 0.5) / m
    qa = np.quantile(a, q, method="inverted_cdf")
    qb = np.quantile(b, q, method="inverted_cdf")
    return float(np.mean((qa - qb) ** 2))


def sliced_w2(a, b, n_proj: int = 256, rng: np.random.Generator | None = None,
              directions: np.ndarray | None = None) -> float:
    """Mean over random unit directions of the exact 1-D squared W2."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"sample sets must share a dimension: {a.shape} vs {b.shape}")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sample sets must be nonempty")
    if directions is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        directions = random_directions(a.shape[1], n_proj, rng)
    pa = np.sort(a @ directions.T, axis=0)
    pb = np.sort(b @ directions.T, axis=0)
    return float(np.mean([_w2_1d_sorted(pa[:, j], pb[:, j]) for j in range(pa.shape[1])]))


def _mean_pdist(a: np.ndarray, b: np.ndarray) -> float:
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return float(np.sqrt(np.maximum(sq, 0.0)).mean())


def energy_distance(a, b) -> float:
    """``2 E|X-Y| - E|X-X'| - E|Y-Y'|`` with V-statistics (nonnegative)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return max(0.0, 2.0 * _mean_pdist(a, b) - _mean_pdist(a, a) - _mean_pdist(b, b))


def mode_coverage(samples, spec: DatasetSpec | None = None, radius_tol: float | None = None,
                  min_frac: float = 0.01) -> tuple[int, np.ndarray]:
    """Modes of ring8 holding at least ``min_frac`` of the samples within ``radius_tol``."""
    spec = spec or DatasetSpec("ring8")
    if spec.id != "ring8":
        raise ValueError("mode coverage is defined for ring8 only")
    if radius_tol is None:
        radius_tol = 3.0 * spec.sigma
    samples = np.asarray(samples, dtype=np.float64)
    centers = ring8_centers(spec.radius)
    dist = np.linalg.norm(samples[:, None, :] - centers[None, :, :], axis=2)
    nearest = dist.argmin(axis=1)
    close = dist[np.arange(len(samples)), nearest] < radius_tol
    counts = np.bincount(nearest[close], minlength=8)
    recovered = int(np.sum(counts >= min_frac * len(samples)))
    return recovered, counts


def diversity(samples, max_pairs: int = 10_000, rng: np.random.Generator | None = None) -> float:
    """Mean Euclidean distance over up to ``max_pairs`` distinct unordered pairs."""
    samples = np.asarray(samples, dtype=np.float64)
    n = len(samples)
    if n < 2:
        raise ValueError("diversity needs at least two samples")
    total_pairs = n * (n - 1) // 2
    if total_pairs <= max_pairs:
        i, j = np.triu_indices(n, k=1)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        i = rng.integers(0, n, size=max_pairs)
        j = (i + rng.integers(1, n, size=max_pairs)) % n
    return float(np.linalg.norm(samples[i] - samples[j], axis=1).mean())


def evaluate_samples(samples, reference, spec: DatasetSpec, nfe: int, n_proj: int = 256,
                     seed: int = 0) -> MetricsReport:
    rng = np.random.default_rng(seed)
    sw = sliced_w2(samples, reference, n_proj, rng)
    n_e = min(len(samples), 2000)
    ed = energy_distance(samples[:n_e], reference[:n_e])
    modes = mode_coverage(samples, spec)[0] if spec.id == "ring8" else None
    div = diversity(samples, rng=rng)
    return MetricsReport(sliced_w2=sw, energy_dist=ed, modes_recovered=modes,
                         diversity=div, nfe=nfe)
