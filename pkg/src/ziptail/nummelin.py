"""Pseudo-regeneration of real-valued chains with a known transition density.

The small set is an interval ``V = [x0 - eps, x0 + eps]`` with uniform
minorizing density ``1/(2 eps)`` and constant ``delta(V) = 2 eps inf_{V^2} pi``.
Given a path, the auxiliary Bernoulli variables are drawn only at visits to V;
visits with ``Y = 1`` act as regeneration times of the split chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .chains import ChainError, Trajectory
from .tail_core import TailEstimate, beta_hat, k_ln_rule

_LATTICE = 64


class SmallSetError(ChainError):
    pass


@dataclass(frozen=True)
class KernelDensity:
    """Transition density ``pi(x, y)``.

    For convolution kernels ``pi(x, y) = f(y - x)`` with ``f`` symmetric and
    unimodal, pass ``increment`` so the infimum over V^2 is exact.
    """

    eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    increment: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, x, y):
        return self.eval(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def infimum(self, x0: float, eps: float) -> float:
        if self.increment is not None:
            return float(self.increment(np.asarray(2.0 * eps)))
        # lattice approximation for general kernels
        g = np.linspace(x0 - eps, x0 + eps, _LATTICE)
        xx, yy = np.meshgrid(g, g, indexing="ij")
        return float(np.min(self(xx, yy)))


def gaussian_kernel(sigma: float = 1.0) -> KernelDensity:
    """Density of ``X_{n+1} = X_n + sigma Z`` with Z standard normal."""
    c = 1.0 / (sigma * math.sqrt(2.0 * math.pi))

    def f(d):
        d = np.asarray(d, dtype=float) / sigma
        return c * np.exp(-0.5 * d * d)

    return KernelDensity(eval=lambda x, y: f(y - x), increment=f)


@dataclass(frozen=True)
class SmallSet:
    x0: float
    eps: float
    delta: float
    psi_const: float

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x)
        return (x >= self.x0 - self.eps) & (x <= self.x0 + self.eps)


def small_set(kernel: KernelDensity, x0: float, eps: float) -> SmallSet:
    if not eps > 0:
        raise ValueError("eps must be positive")
    delta = 2.0 * eps * kernel.infimum(x0, eps)
    if not 0.0 < delta <= 1.0:
        raise SmallSetError(f"minorization constant {delta} outside (0, 1]")
    return SmallSet(x0, eps, delta, 1.0 / (2.0 * eps))


@dataclass(frozen=True)
class SplitChainResult:
    visit_times: np.ndarray
    y_flags: np.ndarray
    probs: np.ndarray
    pseudo_hit_times: np.ndarray
    durations: np.ndarray
    n: int

    @property
    def n_blocks(self) -> int:
        return int(self.durations.size)


def _pairs_in_set(traj: Trajectory, lo: float, hi: float):
    # candidates are i = 1 .. n-1: X_i needs an observed successor
    x = np.asarray(traj.states[1:-1], dtype=float)
    y = np.asarray(traj.states[2:], dtype=float)
    in_x = (x >= lo) & (x <= hi)
    both = in_x & (y >= lo) & (y <= hi)
    return x, y, in_x, both


def expected_blocks(traj: Trajectory, kernel: KernelDensity, x0: float, eps: float) -> float:
    """Expected number of split-chain regenerations given the path.

    ``delta(V)/(2 eps) * sum 1{(X_i, X_{i+1}) in V^2} / pi(X_i, X_{i+1})``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    x, y, _, both = _pairs_in_set(traj, x0 - eps, x0 + eps)
    if not np.any(both):
        return 0.0
    dens = kernel(x[both], y[both])
    if np.any(dens <= 0):
        raise SmallSetError("kernel vanishes on small set")
    delta = 2.0 * eps * kernel.infimum(x0, eps)
    return float(delta / (2.0 * eps) * np.sum(1.0 / dens))


def select_epsilon(traj: Trajectory, kernel: KernelDensity, x0: float,
                   eps_grid: Sequence[float]) -> tuple[float, np.ndarray]:
    """Half-width on the grid maximising the expected number of blocks.

    Returns ``(eps_star, curve)`` where curve has columns (eps, expected blocks).
    """
    grid = np.asarray(eps_grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("eps grid must be non-empty and positive")
    vals = np.array([expected_blocks(traj, kernel, x0, e) for e in grid])
    if not np.any(vals > 0):
        raise SmallSetError("small set never visited")
    curve = np.column_stack([grid, vals])
    return float(grid[int(np.argmax(vals))]), curve


def bernoulli_params(traj: Trajectory, kernel: KernelDensity, small: SmallSet):
    """Visit times i with X_i in K and their split probabilities.

    The probability is ``delta psi(X_{i+1}) / pi(X_i, X_{i+1})`` and 0 when
    ``X_{i+1}`` leaves K.
    """
    lo, hi = small.x0 - small.eps, small.x0 + small.eps
    x, y, in_x, both = _pairs_in_set(traj, lo, hi)
    idx = np.flatnonzero(in_x)
    probs = np.zeros(idx.size)
    sel = both[idx]
    if np.any(sel):
        dens = kernel(x[idx][sel], y[idx][sel])
        if np.any(dens <= 0):
            raise SmallSetError("kernel vanishes on small set")
        probs[sel] = small.delta * small.psi_const / dens
    if probs.size and probs.max() > 1.0 + 1e-12:
        raise SmallSetError("minorization violated")
    return idx + 1, np.minimum(probs, 1.0)


def sample_split_chain(traj: Trajectory, kernel: KernelDensity, small: SmallSet,
                       rng: np.random.Generator) -> SplitChainResult:
    if traj.states.size < 2:
        raise ValueError("trajectory too short")
    times, probs = bernoulli_params(traj, kernel, small)
    y = rng.random(times.size) < probs
    hits = times[y]
    return SplitChainResult(times, y.astype(np.int8), probs, hits, np.diff(hits), traj.n)


@dataclass(frozen=True)
class SplitEstimate:
    estimate: TailEstimate
    eps: float
    x0: float
    small: SmallSet
    curve: np.ndarray
    split: SplitChainResult


def estimate_beta_split(traj: Trajectory, kernel: KernelDensity, eps_grid: Sequence[float],
                        rng: np.random.Generator, x0: float | None = None,
                        k: int | None = None) -> SplitEstimate:
    """Choose eps, split the chain and estimate the tail index of pseudo-block lengths."""
    if x0 is None:
        x0 = float(np.median(traj.states[1:]))
    eps, curve = select_epsilon(traj, kernel, x0, eps_grid)
    small = small_set(kernel, x0, eps)
    split = sample_split_chain(traj, kernel, small, rng)
    if split.n_blocks < 2:
        raise ChainError("insufficient regenerations")
    if k is None:
        k = k_ln_rule(split.n_blocks, 1.0)
    return SplitEstimate(beta_hat(split.durations, k), eps, x0, small, curve, split)
