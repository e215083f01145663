"""Discrete heavy-tailed laws with exactly known survival functions.

A ``HeavyTailSpec`` defines ``P(S > n) = min(1, n**-beta * L(n))`` for integers
``n >= 1`` where ``L`` is one of a few slowly varying families. Sampling is exact
(inversion of the survival function), so tail probabilities and the population
proxy ``ln p_k - ln p_{k+1}`` are available in closed form for tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .tail_core import INT64_MAX, SampleBatch, level_threshold

SVF_KINDS = ("constant", "log", "invlog", "sr2", "asympconst")

# largest integer searched by generic inversion
INVERSION_CAP = INT64_MAX


class SpecError(ValueError):
    """Raised for a spec that does not define a valid survival function."""


@dataclass(frozen=True)
class SlowlyVaryingSpec:
    """Slowly varying factor L(n).

    kinds:
      constant    L = C
      log         L = C ln(e n)
      invlog      L = C / ln(e n)
      sr2         L = C (1 - c/|rho| U n**rho), rho < 0
      asympconst  L = exp(C0) (1 + n**-lam)
    """

    kind: str = "constant"
    C: float = 1.0
    c: float = 0.0
    rho: float = -1.0
    U: float = 1.0
    C0: float = 0.0
    lam: float = 1.0

    def __post_init__(self):
        if self.kind not in SVF_KINDS:
            raise SpecError(f"unknown slowly varying kind {self.kind!r}")
        if self.kind in ("constant", "log", "invlog", "sr2") and not self.C > 0:
            raise SpecError("C must be positive")
        if self.kind == "sr2":
            if not self.rho < 0:
                raise SpecError("rho must be negative for sr2")
            if self.c < 0 or self.U <= 0:
                raise SpecError("sr2 needs c >= 0 and U > 0")
            if self.c * self.U / abs(self.rho) >= 1.0:
                raise SpecError("sr2 factor is non-positive at n=1 (need c*U/|rho| < 1)")
        if self.kind == "asympconst":
            if not self.C0 > 0:
                raise SpecError("C0 must be positive")
            if not self.lam > 0:
                raise SpecError("lam must be positive")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full_like(x, self.C)
        if self.kind == "log":
            return self.C * (1.0 + np.log(x))
        if self.kind == "invlog":
            return self.C / (1.0 + np.log(x))
        if self.kind == "sr2":
            return self.C * (1.0 - self.c / abs(self.rho) * self.U * x ** self.rho)
        return math.exp(self.C0) * (1.0 + x ** (-self.lam))

    def to_dict(self) -> dict[str, Any]:
        keys = {
            "constant": ("C",),
            "log": ("C",),
            "invlog": ("C",),
            "sr2": ("C", "c", "rho", "U"),
            "asympconst": ("C0", "lam"),
        }[self.kind]
        d = {"kind": self.kind}
        d.update({k: getattr(self, k) for k in keys})
        return d


def _validation_grid(n_max: int = 10**7) -> np.ndarray:
    small = np.arange(1, 4097, dtype=np.int64)
    doubling = [1 << j for j in range(12, int(math.log2(n_max)) + 1)]
    local = []
    for d in doubling:
        local.extend([d - 1, d, d + 1])
    grid = np.unique(np.concatenate([small, np.array(local, dtype=np.int64), [n_max]]))
    return grid


@dataclass(frozen=True)
class HeavyTailSpec:
    """Tail index plus slowly varying factor; validated on construction."""

    beta: float
    svf: SlowlyVaryingSpec = field(default_factory=SlowlyVaryingSpec)

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise SpecError("beta must be positive")
        grid = _validation_grid()
        s = self.survival(grid)
        if np.any(~np.isfinite(s)) or np.any(s < 0) or np.any(s > 1):
            raise SpecError("survival values leave [0, 1]")
        bad = np.nonzero(np.diff(s) > 1e-15)[0]
        if bad.size:
            raise SpecError(
                f"survival function increases between n={grid[bad[0]]} and n={grid[bad[0] + 1]}"
            )

    @property
    def is_pure_pareto(self) -> bool:
        return self.svf.kind == "constant" and self.svf.C == 1.0

    def survival(self, n):
        """P(S > n) for integer n >= 0 (P(S > 0) = 1)."""
        x = np.asarray(n, dtype=float)
        # evaluate on 1-d arrays: scalar and vector pow may differ in the last ulp
        flat = np.atleast_1d(x).ravel()
        safe = np.maximum(flat, 1.0)
        s = np.minimum(1.0, safe ** (-self.beta) * self.svf(safe))
        return np.where(flat < 1, 1.0, s).reshape(x.shape)

    def to_dict(self) -> dict[str, Any]:
        return {"beta": self.beta, "svf": self.svf.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "HeavyTailSpec":
        svf = dict(d.get("svf", {"kind": "constant", "C": 1.0}))
        kind = svf.pop("kind", "constant")
        try:
            return cls(float(d["beta"]), SlowlyVaryingSpec(kind=kind, **svf))
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed heavy-tail spec: {exc}") from exc


def survival_exact(spec: HeavyTailSpec, n) -> float | np.ndarray:
    out = spec.survival(n)
    return float(out) if np.ndim(out) == 0 else out


def _uniform_open0(rng: np.random.Generator, count: int) -> np.ndarray:
    """Uniform draws on (0, 1]."""
    return 1.0 - rng.random(count)


def invert_pareto(u: np.ndarray, beta: float) -> np.ndarray:
    """``ceil(u**(-1/beta))`` saturated at INT64_MAX."""
    with np.errstate(over="ignore", divide="ignore"):
        x = np.ceil(u ** (-1.0 / beta))
    out = np.empty(x.shape, dtype=np.int64)
    big = ~(x < float(INT64_MAX))
    out[~big] = x[~big].astype(np.int64)
    out[big] = INT64_MAX
    return out


def invert_survival(spec: HeavyTailSpec, u: np.ndarray) -> np.ndarray:
    """Smallest n >= 1 with survival(n) < u, by doubling then bisection."""
    u = np.asarray(u, dtype=float)
    lo = np.zeros(u.shape, dtype=np.int64)  # survival(lo) >= u
    hi = np.ones(u.shape, dtype=np.int64)
    active = spec.survival(hi) >= u
    while np.any(active):
        lo = np.where(active, hi, lo)
        if np.any(hi[active] >= (INVERSION_CAP >> 1)):
            raise OverflowError("inversion exceeded the search cap")
        hi = np.where(active, hi * 2, hi)
        active = spec.survival(hi) >= u
    while True:
        gap = hi - lo
        open_ = gap > 1
        if not np.any(open_):
            break
        mid = lo + gap // 2
        go_hi = spec.survival(mid) >= u
        lo = np.where(open_ & go_hi, mid, lo)
        hi = np.where(open_ & ~go_hi, mid, hi)
    return hi


def sample(spec: HeavyTailSpec, rng: np.random.Generator, count: int) -> SampleBatch:
    """Draw ``count`` i.i.d. values with P(S > n) exactly ``survival_exact(spec, n)``."""
    return SampleBatch(sample_values(spec, rng, count))


def sample_values(spec: HeavyTailSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    u = _uniform_open0(rng, count)
    if spec.is_pure_pareto:
        return invert_pareto(u, spec.beta)
    return invert_survival(spec, u)


def beta_k_exact(spec: HeavyTailSpec, k: int) -> float:
    """Population proxy ``ln P(S > e**k) - ln P(S > e**(k+1))``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return math.log(survival_exact(spec, level_threshold(k))) - math.log(
        survival_exact(spec, level_threshold(k + 1))
    )


def tail_prob(spec: HeavyTailSpec, level: int) -> float:
    """p_l = P(S > e**l)."""
    return survival_exact(spec, level_threshold(level))


def sr2_bias(c: float, rho: float, U_const: float, A: float, n: float) -> float:
    """Leading term ``-c/|rho| n**(-A|rho|) U (1 - exp(-|rho|))`` of the log-ratio bias."""
    if not rho < 0:
        raise ValueError("rho must be negative")
    if n < 2:
        raise ValueError("n must be >= 2")
    r = abs(rho)
    return -c / r * n ** (-A * r) * U_const * (1.0 - math.exp(-r))


@dataclass(frozen=True)
class ZetaSpec:
    """P(W = j) proportional to j**-s; tail index s - 1."""

    s: float

    def __post_init__(self):
        if not self.s > 1:
            raise SpecError("zeta exponent s must exceed 1")

    @property
    def beta(self) -> float:
        return self.s - 1.0

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "zeta", "s": self.s}


def _zeta_rejection(a: float, rng: np.random.Generator, count: int) -> np.ndarray:
    """Devroye's rejection sampler for the Zipf law with exponent a > 1."""
    am1 = a - 1.0
    b = 2.0 ** am1
    out = np.empty(count, dtype=np.int64)
    filled = 0
    while filled < count:
        need = count - filled
        batch = max(64, int(need * 1.3) + 16)
        u = _uniform_open0(rng, batch)
        v = rng.random(batch)
        with np.errstate(over="ignore"):
            x = np.floor(u ** (-1.0 / am1))
        finite = np.isfinite(x)
        xf = np.where(finite, x, 1.0)
        tm1 = np.expm1(am1 * np.log1p(1.0 / xf))
        # x * (t - 1) -> a - 1 as x -> inf
        x_tm1 = np.where(finite, xf * tm1, am1)
        t = np.where(finite, 1.0 + tm1, 1.0)
        accept = v * x_tm1 / (b - 1.0) <= t / b
        # values beyond int64 saturate; they exceed every representable level
        xa = x[accept][:need]
        big = ~(xa < 2.0 ** 63)
        got = np.where(big, 1.0, xa).astype(np.int64)
        got[big] = INT64_MAX
        out[filled:filled + got.size] = got
        filled += got.size
    return out


def sample_zeta(spec: ZetaSpec, rng: np.random.Generator, count: int) -> SampleBatch:
    if count < 1:
        raise ValueError("count must be >= 1")
    return SampleBatch(_zeta_rejection(spec.s, rng, count))


def spec_from_dict(d: dict[str, Any]) -> HeavyTailSpec | ZetaSpec:
    if d.get("kind") == "zeta":
        return ZetaSpec(float(d["s"]))
    return HeavyTailSpec.from_dict(d)


def replicate_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent stream for replicate ``key`` of a run seeded by ``master_seed``.

    Mixing goes through ``SeedSequence(master_seed, spawn_key=key)``, the same
    derivation ``SeedSequence.spawn`` uses, so streams do not depend on
    scheduling or worker count.
    """
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))
