"""Regenerative Markov chain simulators and regeneration-block statistics.

Chains: simple symmetric random walk (free or reflected at 0), Bessel random
walk, the renewal-type chain ``X_n = (X_{n-1} - 1) 1{X_{n-1} > 1} + eta_n
1{X_{n-1} in [0, 1]}`` and a threshold autoregression. Trajectories store
``X_0 .. X_n``; visit times and occupation counts only look at ``X_1 .. X_n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from numba import njit

from . import dgp
from .tail_core import TailEstimate, beta_hat, k_ln_rule

CHAIN_KINDS = ("ssrw", "bessel", "renewal", "tar", "gaussian_walk")
DEFAULT_CHUNK = 1 << 20


class ChainError(RuntimeError):
    pass


class InsufficientRegenerations(ChainError):
    pass


@dataclass(frozen=True)
class ChainSpec:
    """Parameters of one of the supported chains.

    ``h_c`` selects the Bessel correction ``h(k) = h_c / (k ln(k + 1))``
    (0 means h identically zero). TAR uses the region ``K = (-inf, threshold]``
    on which the autoregressive coefficient ``alpha1`` applies.
    """

    kind: str
    reflect: bool = False
    delta: float = 0.0
    h_c: float = 0.0
    eta: dgp.HeavyTailSpec | None = None
    alpha1: float = 0.5
    threshold: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in CHAIN_KINDS:
            raise ValueError(f"unknown chain kind {self.kind!r}")
        if self.kind == "bessel" and self.delta < -1:
            raise ValueError("Bessel drift delta must be >= -1")
        if self.kind == "renewal" and self.eta is None:
            raise ValueError("renewal chain needs an eta spec")
        if self.kind in ("tar", "gaussian_walk") and not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def x0(self) -> float:
        return 0.5 if self.kind == "renewal" else 0.0

    @property
    def beta(self) -> float | None:
        """Regularity index when known in closed form."""
        if self.kind in ("ssrw", "tar", "gaussian_walk"):
            return 0.5
        if self.kind == "bessel":
            return (1.0 + self.delta) / 2.0 if -1 < self.delta < 1 else None
        return self.eta.beta if self.eta.beta <= 1 else None

    def default_atom(self) -> "Atom":
        if self.kind in ("ssrw", "bessel"):
            return point_atom(0)
        if self.kind == "renewal":
            return interval_atom(0.0, 1.0)
        raise ChainError(f"{self.kind} chain has no accessible atom")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind}
        if self.kind == "ssrw":
            d["reflect"] = self.reflect
        elif self.kind == "bessel":
            d.update(delta=self.delta, h_c=self.h_c)
        elif self.kind == "renewal":
            d["eta"] = self.eta.to_dict()
        elif self.kind == "tar":
            d.update(alpha1=self.alpha1, threshold=self.threshold, sigma=self.sigma)
        else:
            d["sigma"] = self.sigma
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ChainSpec":
        d = dict(d)
        kind = d.pop("kind", None)
        if "eta" in d and isinstance(d["eta"], dict):
            d["eta"] = dgp.HeavyTailSpec.from_dict(d["eta"])
        try:
            return cls(kind=kind, **d)
        except TypeError as exc:
            raise ValueError(f"malformed chain spec: {exc}") from exc


@dataclass(frozen=True)
class Atom:
    """Vectorised state predicate with a printable description."""

    func: Callable[[np.ndarray], np.ndarray]
    label: str

    def __call__(self, x):
        return self.func(np.asarray(x))


def point_atom(value: float) -> Atom:
    return Atom(lambda x: x == value, f"{{{value}}}")


def interval_atom(lo: float, hi: float) -> Atom:
    return Atom(lambda x: (x >= lo) & (x <= hi), f"[{lo}, {hi}]")


def whole_space() -> Atom:
    return Atom(lambda x: np.ones(np.shape(x), dtype=bool), "E")


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray

    @property
    def n(self) -> int:
        return int(self.states.size - 1)

    def __len__(self) -> int:
        return self.states.size


@dataclass(frozen=True)
class RegenerationBlocks:
    hit_times: np.ndarray
    durations: np.ndarray
    n: int

    @property
    def n_blocks(self) -> int:
        return int(self.durations.size)


def bessel_up_probability(k: int, delta: float, h_c: float = 0.0) -> float:
    """Probability of stepping from k to k + 1 in the Bessel walk (1 at k = 0)."""
    if k == 0:
        return 1.0
    h = h_c / (k * math.log(k + 1.0)) if h_c else 0.0
    return 0.5 * (1.0 + h - delta / (2.0 * k))


# --- kernels ---------------------------------------------------------------


@njit(cache=True)
def _birth_death_walk(u, x0, delta, h_c, out):
    """Reflected nearest-neighbour walk on N; returns 0 or the offending state.

    From k >= 1 the walk steps up iff u < (1 + h(k) - delta/(2k)) / 2; from 0 it
    always steps up.
    """
    x = x0
    for i in range(u.size):
        if x == 0:
            x = 1
        else:
            h = 0.0
            if h_c != 0.0:
                h = h_c / (x * math.log(x + 1.0))
            p = 0.5 * (1.0 + h - delta / (2.0 * x))
            if not (0.0 < p < 1.0):
                return x
            if u[i] < p:
                x += 1
            else:
                x -= 1
        out[i] = x
    return 0


@njit(cache=True)
def _tar_walk(eps, x0, alpha1, threshold, out):
    x = x0
    for i in range(eps.size):
        if x <= threshold:
            x = alpha1 * x + eps[i]
        else:
            x = x + eps[i]
        out[i] = x


def _chunks(n: int, chunk: int) -> Iterator[int]:
    done = 0
    while done < n:
        m = min(chunk, n - done)
        yield m
        done += m


def iter_states(spec: ChainSpec, n: int, rng: np.random.Generator,
                chunk: int = DEFAULT_CHUNK) -> Iterator[np.ndarray]:
    """Yield ``X_1 .. X_n`` in consecutive chunks without holding the full path.

    Chunking does not change the random stream: the same (spec, seed, n)
    produce the same path for any ``chunk``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if spec.kind == "renewal":
        states = _renewal_states(spec.eta, n, rng)
        for start in range(0, n, chunk):
            yield states[start:start + chunk]
        return
    x: float = spec.x0
    for m in _chunks(n, chunk):
        if spec.kind == "ssrw" and not spec.reflect:
            steps = np.where(rng.random(m) < 0.5, 1, -1).astype(np.int64)
            out = int(x) + np.cumsum(steps)
        elif spec.kind in ("ssrw", "bessel"):
            out = np.empty(m, dtype=np.int64)
            delta = spec.delta if spec.kind == "bessel" else 0.0
            h_c = spec.h_c if spec.kind == "bessel" else 0.0
            bad = _birth_death_walk(rng.random(m), int(x), delta, h_c, out)
            if bad:
                raise ChainError(f"invalid Bessel transition probability at state k={bad}")
        elif spec.kind == "tar":
            out = np.empty(m, dtype=np.float64)
            _tar_walk(spec.sigma * rng.standard_normal(m), float(x), spec.alpha1,
                      spec.threshold, out)
        else:
            # running sum seeded with x so chunk boundaries do not change rounding
            out = np.cumsum(np.concatenate([[x], spec.sigma * rng.standard_normal(m)]))[1:]
        x = out[-1]
        yield out


def excursion_lengths(eta: np.ndarray) -> np.ndarray:
    """Steps until the renewal chain re-enters [0, 1] after jumping to eta >= 0."""
    eta = np.asarray(eta, dtype=float)
    return np.where(eta <= 1.0, 1, np.ceil(eta)).astype(np.int64)


def renewal_path(eta: np.ndarray, n: int) -> np.ndarray:
    """``X_1 .. X_n`` of the renewal chain from a point of [0, 1] given its jumps.

    From the atom the chain jumps to the next eta; above 1 it moves down by one
    each step. ``eta`` must hold enough jumps to cover n steps.
    """
    e = np.asarray(eta, dtype=float)
    if np.any(e < 0):
        raise ValueError("eta must be non-negative")
    # no excursion contributes more than n states
    lengths = np.minimum(excursion_lengths(e), n)
    ends = np.cumsum(lengths)
    if ends.size == 0 or ends[-1] < n:
        raise ValueError("not enough jumps to cover n steps")
    J = int(np.searchsorted(ends, n, side="left")) + 1
    e, lengths, ends = e[:J], lengths[:J], ends[:J]
    starts = ends - lengths + 1
    lengths[-1] -= ends[-1] - n
    t = np.arange(1, n + 1, dtype=np.int64)
    offset = t - np.repeat(starts, lengths)
    return np.repeat(e, lengths) - offset


def _renewal_states(eta: dgp.HeavyTailSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Path of the renewal chain started at 0.5 with integer-valued eta >= 1."""
    draws = []
    covered = 0
    size = 1024
    while covered < n:
        d = dgp.sample_values(eta, rng, size)
        draws.append(d)
        covered += int(np.minimum(d, n).sum())
        size *= 2
    return renewal_path(np.concatenate(draws), n)


def renewal_excursion_values(eta: dgp.HeavyTailSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """The eta draws a renewal-chain simulation with the same rng would consume."""
    states = _renewal_states(eta, n, rng)
    prev = np.concatenate([[0.5], states[:-1]])
    return states[(prev >= 0) & (prev <= 1)].astype(np.int64)


def simulate(spec: ChainSpec, n: int, rng: np.random.Generator,
             chunk: int = DEFAULT_CHUNK) -> Trajectory:
    dtype = np.int64 if spec.kind in ("ssrw", "bessel") else np.float64
    states = np.empty(n + 1, dtype=dtype)
    states[0] = spec.x0
    pos = 1
    for part in iter_states(spec, n, rng, chunk):
        states[pos:pos + part.size] = part
        pos += part.size
    return Trajectory(states)


# --- block statistics ---------------------------------------------------------


def _blocks_from_hits(hits: np.ndarray, n: int) -> RegenerationBlocks:
    hits = np.asarray(hits, dtype=np.int64)
    return RegenerationBlocks(hits, np.diff(hits), n)


def regeneration_times(traj: Trajectory, atom: Atom) -> RegenerationBlocks:
    """Visit times ``{i >= 1 : X_i in A}`` and the complete inter-visit durations."""
    hits = np.flatnonzero(atom(traj.states[1:])) + 1
    return _blocks_from_hits(hits, traj.n)


@dataclass
class StreamSummary:
    blocks: RegenerationBlocks
    occupation: int


def stream_blocks(spec: ChainSpec, n: int, rng: np.random.Generator, atom: Atom | None = None,
                  chunk: int = DEFAULT_CHUNK) -> StreamSummary:
    """Regeneration blocks of a fresh simulation, keeping only hit times."""
    atom = atom or spec.default_atom()
    hits = []
    pos = 1
    for part in iter_states(spec, n, rng, chunk):
        hits.append(np.flatnonzero(atom(part)) + pos)
        pos += part.size
    h = np.concatenate(hits) if hits else np.empty(0, dtype=np.int64)
    return StreamSummary(_blocks_from_hits(h, n), int(h.size))


def beta_hat_from_blocks(blocks: RegenerationBlocks, k: int | None = None) -> TailEstimate:
    N = blocks.n_blocks
    if N < 2:
        raise InsufficientRegenerations("insufficient regenerations")
    if k is None:
        k = k_ln_rule(N, 1.0)
    return beta_hat(blocks.durations, k)


def beta_hat_markov(traj: Trajectory, atom: Atom, k: int | None = None) -> TailEstimate:
    """Tail index of the regeneration durations; k defaults to round(ln N_n)."""
    return beta_hat_from_blocks(regeneration_times(traj, atom), k)


def occupation_time(traj: Trajectory, B: Atom) -> int:
    return int(np.count_nonzero(B(traj.states[1:])))


def beta_tilde_from_count(count: int, n: int) -> float:
    if n < 2:
        raise ValueError("n must be >= 2")
    if count < 1:
        raise ChainError("set never visited")
    return math.log(count) / math.log(n)


def beta_tilde(traj: Trajectory, B: Atom) -> float:
    """``ln(occupation time of B) / ln n``."""
    return beta_tilde_from_count(occupation_time(traj, B), traj.n)


def occupation_counts(traj: Trajectory, B: Atom, times: Sequence[int]) -> np.ndarray:
    """Occupation times ``Sigma_m(B)`` for each m in ``times`` (0 <= m <= n)."""
    cum = np.concatenate([[0], np.cumsum(B(traj.states[1:]), dtype=np.int64)])
    return cum[np.asarray(times, dtype=np.int64)]


def occupation_process(traj: Trajectory, B: Atom, grid: Sequence[float], beta: float,
                       L_value: float = 1.0) -> np.ndarray:
    """Scaled occupation ``Sigma_{floor(n t)}(B) / (n**beta * L_value)`` on a grid of t.

    ``L_value`` stands in for the unknown slowly varying normaliser, so values
    are only meaningful up to that factor.
    """
    if L_value <= 0:
        raise ValueError("L_value must be positive")
    t = np.asarray(grid, dtype=float)
    if np.any(t < 0):
        raise ValueError("grid points must be non-negative")
    n = traj.n
    m = np.minimum(np.floor(n * t).astype(np.int64), n)
    return occupation_counts(traj, B, m) / (n ** beta * L_value)


def mittag_leffler_moment(beta: float, m: int) -> float:
    """E[M_beta(1)**m] = m! / Gamma(1 + m beta)."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if m < 0:
        raise ValueError("m must be >= 0")
    return math.exp(math.lgamma(m + 1.0) - math.lgamma(1.0 + m * beta))
