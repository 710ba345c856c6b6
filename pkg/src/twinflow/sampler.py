"""Few-step Euler-jump sampling on the real and fake branches.

The network predicts the average velocity in the ``z - x`` direction, so a
jump from time ``s`` to ``s_next < s`` is ``x + (s_next - s) * A(x, s, s_next)``.
(With the opposite ``x - z`` convention the same jump reads ``F * (s - s_next)``.)
The fake branch is identical except both time arguments are negated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import VelocityNet


@dataclass
class SampleRun:
    nfe: int
    times: np.ndarray
    samples: np.ndarray
    trajectory: list[np.ndarray] | None = None


def time_grid(nfe: int) -> np.ndarray:
    """Uniform grid ``1 = s_0 > ... > s_K = 0`` with exact endpoints."""
    if nfe < 1:
        raise ValueError("nfe must be >= 1")
    grid = 1.0 - np.arange(nfe + 1) / nfe
    grid[0], grid[-1] = 1.0, 0.0
    return grid


def integrate(net: VelocityNet, z: np.ndarray, nfe: int, c=None, branch: str = "real",
              record: bool = False) -> SampleRun:
    """Run the jump recursion from given initial noise ``z``."""
    if branch not in ("real", "fake"):
        raise ValueError(f"branch must be 'real' or 'fake', got {branch!r}")
    sign = 1.0 if branch == "real" else -1.0
    grid = time_grid(nfe)
    x = np.array(z, dtype=np.float64)
    traj = [x.copy()] if record else None
    for s, s_next in zip(grid[:-1], grid[1:]):
        x = x + (s_next - s) * net(x, sign * s, sign * s_next, c)
        if record:
            traj.append(x.copy())
    return SampleRun(nfe=nfe, times=grid, samples=x, trajectory=traj)


def sample(net: VelocityNet, n: int, nfe: int, rng: np.random.Generator, c=None,
           branch: str = "real", record: bool = False) -> SampleRun:
    z = rng.standard_normal((n, net.cfg.data_dim))
    return integrate(net, z, nfe, c, branch, record)


def nfe_sweep(net: VelocityNet, n: int, nfe_list, rng: np.random.Generator, c=None,
              branch: str = "real") -> list[SampleRun]:
    """One run per NFE, all starting from the same noise batch."""
    nfe_list = list(nfe_list)
    if not nfe_list:
        raise ValueError("nfe_list must be nonempty")
    z = rng.standard_normal((n, net.cfg.data_dim))
    return [integrate(net, z, k, c, branch) for k in nfe_list]
