"""Linear transport ``x_t = t*z + (1-t)*x`` and related identities.

Velocities follow the convention ``u = z - x`` (noise minus data), the
derivative of the straight path in ``t``.  Negative times never enter the
interpolation itself; they only condition the network on the fake branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Floor on training times; keeps the 1/t in the score map and the base-loss
# normalisation away from their singularities.
EPS_T = 1e-3
# Minimum gap t - t1 accepted by the base loss.
MIN_GAP = 1e-6


class SingularTimeError(ValueError):
    pass


@dataclass(frozen=True)
class TransportPoint:
    x_t: np.ndarray
    t: np.ndarray
    x: np.ndarray
    z: np.ndarray


def _col(t, x: np.ndarray) -> np.ndarray:
    """Broadcast a scalar or per-sample time against a batch."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 1 and x.ndim == 2:
        return t[:, None]
    return t


def interpolate(x, z, t) -> TransportPoint:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ValueError(f"x and z shapes differ: {x.shape} vs {z.shape}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError("interpolation time must lie in [0, 1]")
    tc = _col(t_arr, x)
    return TransportPoint(x_t=tc * z + (1.0 - tc) * x, t=t_arr, x=x, z=z)


def true_velocity(x, z) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ValueError(f"x and z shapes differ: {x.shape} vs {z.shape}")
    return z - x


def velocity_to_score(x_t, t, velocity) -> np.ndarray:
    """Score of the marginal at time ``t`` given the velocity field value there.

    s(x_t) = -(x_t + (1 - t) * F) / t
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr <= 0.0):
        raise SingularTimeError("velocity_to_score is singular at t <= 0")
    tc = _col(t_arr, x_t)
    return -(x_t + (1.0 - tc) * np.asarray(velocity, dtype=np.float64)) / tc


def sample_times(rng: np.random.Generator, n: int, floor: float = 0.0) -> np.ndarray:
    """Draw ``t ~ U(floor, 1)``; ``floor=0`` is plain U(0, 1)."""
    return floor + (1.0 - floor) * rng.random(n)


def sample_chain_n2(rng: np.random.Generator, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sub-times ``t > t1 > t2 > t3 >= 0`` with each drawn uniformly below its predecessor.

    Draws leaving ``t - t1 < MIN_GAP`` are redrawn so the base loss never
    divides by a vanishing interval.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any(t <= 0.0) or np.any(t > 1.0):
        raise ValueError("chain anchor time must lie in (0, 1]")
    if np.any(t <= MIN_GAP):
        raise ValueError(f"chain anchor time must exceed {MIN_GAP}")
    t1 = t * rng.random(t.shape)
    bad = t - t1 < MIN_GAP
    while np.any(bad):
        t1[bad] = t[bad] * rng.random(int(bad.sum()))
        bad = t - t1 < MIN_GAP
    t2 = t1 * rng.random(t.shape)
    t3 = t2 * rng.random(t.shape)
    return t1, t2, t3
