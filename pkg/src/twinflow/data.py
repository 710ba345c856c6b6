"""Synthetic target distributions with exact samplers.

``ring8``, ``gauss_unit`` and ``point_mass`` also have closed forms used by
the oracle checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DATASETS = ("ring8", "checkerboard", "two_moons", "gauss_unit", "point_mass")


@dataclass(frozen=True)
class DatasetSpec:
    id: str = "ring8"
    dim: int = 2
    radius: float = 4.0
    sigma: float = 0.15
    center: tuple[float, ...] = field(default=(0.0, 0.0))
    conditional: bool = False

    def __post_init__(self):
        if self.id not in DATASETS:
            raise ValueError(f"unknown dataset {self.id!r}; choose from {DATASETS}")
        if self.id in ("ring8", "checkerboard", "two_moons") and self.dim != 2:
            raise ValueError(f"{self.id} is two-dimensional")
        if self.id == "point_mass" and len(self.center) != self.dim:
            raise ValueError("point_mass center length must equal dim")
        if self.conditional and self.id != "ring8":
            raise ValueError("only ring8 has class labels")

    @property
    def n_classes(self) -> int:
        return 8 if self.conditional else 0


def ring8_centers(radius: float = 4.0) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(8) / 8
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def sample_data(spec: DatasetSpec, n: int, rng: np.random.Generator):
    """Return ``(x, labels)``; labels are mode indices for ring8, else None."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if spec.id == "ring8":
        labels = rng.integers(0, 8, size=n)
        x = ring8_centers(spec.radius)[labels] + spec.sigma * rng.standard_normal((n, 2))
        return x, labels
    if spec.id == "gauss_unit":
        return rng.standard_normal((n, spec.dim)), None
    if spec.id == "point_mass":
        return np.tile(np.asarray(spec.center, dtype=np.float64), (n, 1)), None
    if spec.id == "checkerboard":
        # 4x4 board on [-4, 4]^2, alternate cells filled
        col = rng.integers(0, 4, size=n)
        row = 2 * rng.integers(0, 2, size=n) + (col % 2)
        u = rng.random((n, 2))
        x = np.stack([col + u[:, 0], row + u[:, 1]], axis=1) * 2.0 - 4.0
        return x, None
    if spec.id == "two_moons":
        upper = rng.random(n) < 0.5
        ang = np.pi * rng.random(n)
        x = np.where(
            upper[:, None],
            np.stack([np.cos(ang), np.sin(ang)], axis=1),
            np.stack([1.0 - np.cos(ang), 0.5 - np.sin(ang)], axis=1),
        )
        x = 2.0 * (x - np.array([0.5, 0.25])) + spec.sigma * rng.standard_normal((n, 2))
        return x, None
    raise ValueError(f"unknown dataset {spec.id!r}")


def oracle_velocity(spec: DatasetSpec, x_t, t) -> np.ndarray:
    """Exact ``E[z - x | x_t]`` under linear transport with ``z ~ N(0, I)``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0.0) or np.any(t > 1.0):
        raise ValueError("oracle velocity needs t in (0, 1]")
    tc = t[:, None] if t.ndim == 1 and x_t.ndim == 2 else t
    if spec.id == "gauss_unit":
        # jointly Gaussian: E[z|x_t] = t x_t / s2, E[x|x_t] = (1-t) x_t / s2
        s2 = tc * tc + (1.0 - tc) ** 2
        return (2.0 * tc - 1.0) * x_t / s2
    if spec.id == "point_mass":
        c = np.asarray(spec.center, dtype=np.float64)
        # z is recovered exactly: z = (x_t - (1-t) c) / t, so u = z - c = (x_t - c) / t
        return (x_t - c) / tc
    raise ValueError(f"no closed-form velocity for {spec.id!r}")


def analytic_score(spec: DatasetSpec, x_t, t) -> np.ndarray:
    """Score of the time-``t`` marginal for the closed-form datasets."""
    x_t = np.asarray(x_t, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    tc = t[:, None] if t.ndim == 1 and x_t.ndim == 2 else t
    if spec.id == "gauss_unit":
        return -x_t / (tc * tc + (1.0 - tc) ** 2)
    if spec.id == "point_mass":
        c = np.asarray(spec.center, dtype=np.float64)
        return -(x_t - (1.0 - tc) * c) / (tc * tc)
    raise ValueError(f"no closed-form score for {spec.id!r}")
