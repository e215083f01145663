"""Ratio-of-log-survival tail index estimator for integer-valued samples.

For a sample S_1..S_n of positive integers the empirical survival at level l is
``p_hat(l) = #{i : S_i > e**l} / n`` and the tail index estimate at level k is
``ln p_hat(k) - ln p_hat(k+1)`` (zero when ``p_hat(k+1) == 0``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, localcontext
from functools import lru_cache
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np

INT64_MAX = np.iinfo(np.int64).max


class EmptySampleError(ValueError):
    pass


@dataclass(frozen=True)
class SampleBatch:
    """A finite multiset of positive integer observations."""

    values: np.ndarray

    def __init__(self, values: Iterable[int] | np.ndarray):
        arr = np.asarray(values)
        if arr.size == 0:
            raise EmptySampleError("empty sample")
        if arr.dtype.kind == "f":
            if not np.all(np.isfinite(arr)) or np.any(arr != np.floor(arr)):
                raise ValueError("observations must be integers")
        elif arr.dtype.kind not in "iu":
            raise ValueError(f"observations must be integers, got dtype {arr.dtype}")
        arr = arr.astype(np.int64).ravel()
        if arr.min() < 1:
            raise ValueError("observations must be >= 1")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class SurvivalCurve:
    levels: np.ndarray
    probs: np.ndarray
    counts: np.ndarray
    n: int

    def at(self, level: int) -> float:
        idx = np.searchsorted(self.levels, level)
        if idx >= self.levels.size or self.levels[idx] != level:
            raise KeyError(level)
        return float(self.probs[idx])


@dataclass(frozen=True)
class TailEstimate:
    beta_hat: float
    k: int
    n: int
    p_hat_k: float
    p_hat_k1: float
    degenerate: bool = False
    ci: tuple[float, float, float] | None = None
    m: int = 0

    def with_ci(self, lo: float, hi: float, level: float) -> "TailEstimate":
        return TailEstimate(self.beta_hat, self.k, self.n, self.p_hat_k, self.p_hat_k1,
                            self.degenerate, (lo, hi, level), self.m)


@dataclass(frozen=True)
class DeviationBound:
    delta: float
    u_n: float
    bound: float
    applicable: bool


@dataclass(frozen=True)
class ScanRow:
    k: int
    beta_hat: float
    ci_lo: float
    ci_hi: float
    p_hat_k: float
    p_hat_k1: float
    degenerate: bool

    def admissible(self, n: int, min_exceed: int = 5) -> bool:
        return self.p_hat_k1 * n >= min_exceed - 1e-9


SCAN_HEADER = ("k", "beta_hat", "ci_lo", "ci_hi", "p_hat_k", "p_hat_k1", "degenerate")


@lru_cache(maxsize=512)
def level_threshold(level: int) -> int:
    """Integer t with ``value > e**level  <=>  value > t`` for integer values.

    Computed in 60-digit decimal arithmetic so the floor is exact well past
    the float64 integer range; saturates at INT64_MAX.
    """
    if level < 0:
        raise ValueError("levels must be non-negative")
    with localcontext() as ctx:
        ctx.prec = 60
        t = int(Decimal(level).exp().to_integral_value(rounding="ROUND_FLOOR"))
    return min(t, INT64_MAX)


def _as_batch(batch) -> SampleBatch:
    return batch if isinstance(batch, SampleBatch) else SampleBatch(batch)


def exceedance_counts(values: np.ndarray, levels: Sequence[int]) -> np.ndarray:
    """Counts #{values > e**l} for each level in one pass over the data."""
    levels = np.asarray(levels, dtype=np.int64)
    thresholds = np.array([level_threshold(int(l)) for l in levels], dtype=np.int64)
    order = np.argsort(thresholds, kind="stable")
    sorted_t = thresholds[order]
    # number of thresholds strictly below each value
    below = np.searchsorted(sorted_t, values, side="left")
    hist = np.bincount(below, minlength=sorted_t.size + 1)
    # values exceeding sorted_t[j] are those with below > j
    exceed_sorted = np.cumsum(hist[::-1])[::-1][1:]
    out = np.empty_like(exceed_sorted)
    out[order] = exceed_sorted
    return out


def empirical_survival(batch, levels: Iterable[int]) -> SurvivalCurve:
    batch = _as_batch(batch)
    levels = np.asarray(sorted(set(int(l) for l in levels)), dtype=np.int64)
    if levels.size == 0:
        raise ValueError("levels must be non-empty")
    counts = exceedance_counts(batch.values, levels)
    return SurvivalCurve(levels=levels, probs=counts / batch.n, counts=counts, n=batch.n)


def _log_ratio(c_k: int, c_k1: int) -> tuple[float, bool]:
    if c_k1 == 0:
        return 0.0, True
    return math.log(c_k) - math.log(c_k1), False


def beta_hat(batch, k: int) -> TailEstimate:
    """Tail index estimate ``ln p_hat(k) - ln p_hat(k+1)``.

    When ``p_hat(k+1) == 0`` the estimate is 0 and ``degenerate`` is set.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    batch = _as_batch(batch)
    c_k, c_k1 = exceedance_counts(batch.values, [k, k + 1])
    b, degenerate = _log_ratio(int(c_k), int(c_k1))
    n = batch.n
    return TailEstimate(b, int(k), n, c_k / n, c_k1 / n, degenerate)


def beta_hat_averaged(batch, k: int, m: int) -> TailEstimate:
    """Mean of the level estimates over the window k-m .. k+m."""
    if m < 0:
        raise ValueError("m must be >= 0")
    if k <= m:
        raise ValueError("window exceeds level")
    if m == 0:
        return beta_hat(batch, k)
    batch = _as_batch(batch)
    levels = list(range(k - m, k + m + 2))
    counts = exceedance_counts(batch.values, levels)
    terms = [_log_ratio(int(counts[j]), int(counts[j + 1])) for j in range(2 * m + 1)]
    mean = math.fsum(t for t, _ in terms) / (2 * m + 1)
    degenerate = any(d for _, d in terms)
    n = batch.n
    return TailEstimate(mean, int(k), n, counts[m] / n, counts[m + 1] / n, degenerate, m=m)


def deviation_bound(n: int, delta: float, p_k1: float) -> DeviationBound:
    """Finite-sample deviation bound ``6 sqrt(u_n / p_{k+1})``, u_n = ln(2/delta)/n.

    ``applicable`` reports whether ``p_k1 >= 16 u_n``; the bound is returned
    either way. ``p_k1`` may be the true tail probability or a plug-in value.
    """
    if not 0.0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    if not 0.0 < p_k1 <= 1.0:
        raise ValueError("p_k1 must lie in (0, 1]")
    if n < 1:
        raise ValueError("n must be >= 1")
    u_n = math.log(2.0 / delta) / n
    return DeviationBound(delta, u_n, 6.0 * math.sqrt(u_n / p_k1), p_k1 >= 16.0 * u_n)


def normal_quantile(p: float) -> float:
    return NormalDist().inv_cdf(p)


def studentized_half_width(beta: float, n: int, p_hat_k: float, level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if p_hat_k <= 0.0:
        raise ValueError("no tail mass at level k")
    z = normal_quantile((1.0 + level) / 2.0)
    return z * math.sqrt(math.expm1(beta) / (n * p_hat_k))


def attach_ci(est: TailEstimate, level: float) -> TailEstimate:
    hw = studentized_half_width(est.beta_hat, est.n, est.p_hat_k, level)
    return est.with_ci(max(0.0, est.beta_hat - hw), est.beta_hat + hw, level)


def studentized_ci(batch, k: int, level: float = 0.95) -> TailEstimate:
    """Estimate at level k with a normal-approximation confidence interval.

    Half-width is ``z * sqrt((exp(beta_hat) - 1) / (n p_hat(k)))``; the lower
    end is clamped at 0.
    """
    return attach_ci(beta_hat(batch, k), level)


def studentized_statistic(est: TailEstimate, target: float) -> float:
    """``sqrt(n p_hat_k) (beta_hat - target) / sqrt(exp(beta_hat) - 1)``."""
    denom = math.sqrt(math.expm1(est.beta_hat)) if est.beta_hat > 0 else float("nan")
    return math.sqrt(est.n * est.p_hat_k) * (est.beta_hat - target) / denom


def k_ln_rule(n: int, A: float = 1.0) -> int:
    """Level ``A ln n`` rounded half-up; consistency needs A < 1/beta."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if A <= 0:
        raise ValueError("A must be positive")
    return int(math.floor(A * math.log(n) + 0.5))


def stability_scan(batch, k_range: Iterable[int], level: float = 0.95) -> list[ScanRow]:
    """Estimates with confidence intervals over a range of levels.

    Degenerate levels (no exceedance of e**(k+1)) are kept with NaN bounds.
    """
    batch = _as_batch(batch)
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        return []
    if ks[0] < 0:
        raise ValueError("k must be >= 0")
    levels = list(range(ks[0], ks[-1] + 2))
    counts = exceedance_counts(batch.values, levels)
    n = batch.n
    rows = []
    for k in ks:
        c_k, c_k1 = int(counts[k - ks[0]]), int(counts[k - ks[0] + 1])
        b, degenerate = _log_ratio(c_k, c_k1)
        if degenerate:
            lo = hi = float("nan")
        else:
            hw = studentized_half_width(b, n, c_k / n, level)
            lo, hi = max(0.0, b - hw), b + hw
        rows.append(ScanRow(k, b, lo, hi, c_k / n, c_k1 / n, degenerate))
    return rows


def admissible_range(batch, k_max: int | None = None, min_exceed: int = 5) -> range:
    """Levels k >= 0 with at least ``min_exceed`` values above e**(k+1)."""
    batch = _as_batch(batch)
    if k_max is None:
        k_max = int(math.log(max(int(batch.values.max()), 1))) + 1
    counts = exceedance_counts(batch.values, range(1, k_max + 2))
    ok = np.nonzero(counts >= min_exceed)[0]
    if ok.size == 0:
        return range(0)
    return range(0, int(ok[-1]) + 1)


def find_plateau(rows: Sequence[ScanRow], target: float, tol: float, min_len: int = 3) -> list[int]:
    """Longest run of consecutive non-degenerate levels with |beta_hat - target| <= tol."""
    best: list[int] = []
    run: list[int] = []
    prev = None
    for r in rows:
        ok = (not r.degenerate) and abs(r.beta_hat - target) <= tol
        if ok and (prev is None or r.k == prev + 1) and run:
            run.append(r.k)
        elif ok:
            run = [r.k]
        else:
            run = []
        prev = r.k
        if len(run) > len(best):
            best = list(run)
    return best if len(best) >= min_len else []
