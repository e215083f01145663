"""Seeded Monte-Carlo scenarios producing CSV tables and a JSON manifest.

Each scenario draws every replicate from its own stream
``replicate_rng(seed, *key)`` and aggregates in replicate order, so output
files are identical for any number of worker threads.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__, chains, dgp, nummelin, tail_core
from .io import write_csv

log = logging.getLogger(__name__)

SCENARIOS = (
    "iid_scan",
    "bias_variance",
    "loglog_occupation",
    "markov_kde",
    "split_chain",
    "averaged_estimator",
    "positive_recurrent",
)
MAX_FAILED_FRACTION = 0.10
HIST_BINS = 50


class ConfigError(ValueError):
    pass


class RunAborted(RuntimeError):
    pass


@dataclass
class ScenarioConfig:
    scenario: str
    replicates: int = 100
    n: int = 10_000
    seed: int = 0
    level: float = 0.95
    workers: int = 1
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if int(self.replicates) < 1:
            raise ConfigError("replicates must be >= 1")
        if int(self.n) < 2:
            raise ConfigError("n must be >= 2")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")
        self.replicates, self.n, self.workers = int(self.replicates), int(self.n), int(self.workers)
        # build every referenced spec once so bad configs fail before any work
        try:
            _SCENARIO_SETUP[self.scenario](self)
        except (dgp.SpecError, chains.ChainError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"invalid parameters for {self.scenario}: {exc}") from exc

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioConfig":
        d = dict(d)
        known = {"scenario", "replicates", "n", "seed", "level", "workers", "params"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "scenario" not in d:
            raise ConfigError("config needs a 'scenario'")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class RunManifest:
    config: dict[str, Any]
    version: str
    seeds: list[list[int]]
    outputs: list[str]
    wall_clock_s: float
    failed: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def write(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def summarize(estimates: Sequence[float], level: float = 0.95) -> tuple[float, float, float, float]:
    """Mean, empirical (1 -+ level)/2 quantiles and sample standard deviation."""
    x = np.asarray(estimates, dtype=float)
    if x.size == 0:
        raise ValueError("empty input")
    lo, hi = np.quantile(x, [(1 - level) / 2, (1 + level) / 2])
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return float(np.mean(x)), float(lo), float(hi), sd


def histogram(values: Sequence[float], bins: int = HIST_BINS):
    x = np.asarray(values, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    return [(edges[i], edges[i + 1], int(counts[i])) for i in range(bins)]


# --- scenario parameter handling ------------------------------------------------


def _heavy_spec(p: dict[str, Any], default_beta: float = 0.5) -> dgp.HeavyTailSpec:
    d = p.get("spec", {"beta": default_beta, "svf": {"kind": "constant", "C": 1.0}})
    return dgp.HeavyTailSpec.from_dict(d)


def _default_k_range(spec: dgp.HeavyTailSpec, n: int, min_exceed: int = 5) -> list[int]:
    ks = []
    k = 0
    while n * dgp.tail_prob(spec, k + 1) >= min_exceed:
        ks.append(k)
        k += 1
    return ks


def _k_range(p: dict[str, Any], fallback: list[int]) -> list[int]:
    if "k_range" in p:
        a, b = p["k_range"]
        return list(range(int(a), int(b) + 1))
    return fallback


def _chain_specs(p: dict[str, Any], default: list[dict[str, Any]]) -> list[chains.ChainSpec]:
    return [chains.ChainSpec.from_dict(d) for d in p.get("chains", default)]


def _setup_iid(cfg):
    p = cfg.params
    if "spec" in p:
        spec = dgp.spec_from_dict(p["spec"])
    else:
        spec = dgp.ZetaSpec(float(p.get("s", 1.15)))
    ks = _k_range(p, list(range(0, int(math.log(cfg.n)) + 2)))
    return spec, ks


def _setup_bias_variance(cfg):
    spec = _heavy_spec(cfg.params)
    return spec, _k_range(cfg.params, _default_k_range(spec, cfg.n))


def _setup_loglog(cfg):
    spec = chains.ChainSpec.from_dict(cfg.params.get("chain", {"kind": "ssrw"}))
    t_min = float(cfg.params.get("t_min", 0.1))
    if not 0 < t_min <= 1 or cfg.n * t_min < 1:
        raise ValueError("t_min must satisfy 0 < t_min <= 1 and n * t_min >= 1")
    t_grid = np.linspace(t_min, 1.0, int(cfg.params.get("t_points", 46)))
    beta = float(cfg.params.get("beta", spec.beta if spec.beta is not None else 0.5))
    return spec, spec.default_atom(), t_grid, beta


def _setup_markov(cfg):
    specs = _chain_specs(cfg.params, [{"kind": "ssrw"}, {"kind": "bessel", "delta": 0.2}])
    for s in specs:
        s.default_atom()
    return specs


def _setup_split(cfg):
    p = cfg.params
    spec = chains.ChainSpec("gaussian_walk", sigma=float(p.get("sigma", 1.0)))
    grid = p.get("eps_grid")
    if grid is None:
        grid = [round(0.05 * i, 10) for i in range(1, 61)]
    grid = [float(e) for e in grid]
    if not grid or min(grid) <= 0:
        raise ValueError("eps_grid must be positive")
    return spec, nummelin.gaussian_kernel(spec.sigma), grid


def _setup_averaged(cfg):
    spec = _heavy_spec(cfg.params)
    k = int(cfg.params.get("k", tail_core.k_ln_rule(cfg.n, float(cfg.params.get("A", 1.0)))))
    ms = [int(m) for m in cfg.params.get("m_values", [0, 1, 2])]
    if any(k <= m for m in ms if m > 0):
        raise ValueError("window exceeds level")
    return spec, k, ms


def _setup_positive(cfg):
    p = cfg.params
    eta = _heavy_spec(p, default_beta=1.5)
    if not 1.0 < eta.beta < 2.0:
        raise ValueError("positive_recurrent needs eta tail index in (1, 2)")
    return chains.ChainSpec("renewal", eta=eta)


_SCENARIO_SETUP: dict[str, Callable] = {
    "iid_scan": _setup_iid,
    "bias_variance": _setup_bias_variance,
    "loglog_occupation": _setup_loglog,
    "markov_kde": _setup_markov,
    "split_chain": _setup_split,
    "averaged_estimator": _setup_averaged,
    "positive_recurrent": _setup_positive,
}


# --- replicate execution -----------------------------------------------------------


def _run_replicates(cfg: ScenarioConfig, keys: list[tuple[int, ...]],
                    fn: Callable[[np.random.Generator, tuple[int, ...]], Any]):
    """Run ``fn`` per key; failures are logged and returned as None."""
    failed: list[dict[str, Any]] = []

    def one(key):
        try:
            return fn(dgp.replicate_rng(cfg.seed, *key), key)
        except (chains.ChainError, ValueError, ArithmeticError) as exc:
            log.warning("replicate %s failed: %s", key, exc)
            return exc

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(one, keys))
    else:
        results = [one(k) for k in keys]
    out = []
    for key, r in zip(keys, results):
        if isinstance(r, Exception):
            failed.append({"key": list(key), "error": str(r)})
            out.append(None)
        else:
            out.append(r)
    if len(failed) > MAX_FAILED_FRACTION * len(keys):
        raise RunAborted(f"{len(failed)} of {len(keys)} replicates failed")
    return out, failed


def _summary_row(values, level):
    v = [x for x in values if x is not None and not math.isnan(x)]
    if not v:
        return [float("nan")] * 4 + [0]
    return list(summarize(v, level)) + [len(v)]


SUMMARY_COLS = ["mean", "q_lo", "q_hi", "sd", "count"]


def _iid_scan(cfg, out):
    spec, ks = _setup_iid(cfg)
    draw = dgp.sample_zeta if isinstance(spec, dgp.ZetaSpec) else dgp.sample

    def rep(rng, key):
        return tail_core.stability_scan(draw(spec, rng, cfg.n), ks, cfg.level)

    res, failed = _run_replicates(cfg, [(i,) for i in range(cfg.replicates)], rep)
    files = []
    first = next(r for r in res if r is not None)
    files.append(write_csv(out / "scan_replicate0.csv", tail_core.SCAN_HEADER,
                           [[getattr(r, c) for c in tail_core.SCAN_HEADER] for r in first]))
    rows = []
    for j, k in enumerate(ks):
        vals = [r[j].beta_hat for r in res if r is not None]
        deg = sum(r[j].degenerate for r in res if r is not None)
        rows.append([k] + _summary_row(vals, cfg.level) + [deg])
    files.append(write_csv(out / "scan_summary.csv", ["k"] + SUMMARY_COLS + ["n_degenerate"], rows))
    return files, failed


def _bias_variance(cfg, out):
    spec, ks = _setup_bias_variance(cfg)

    def rep(rng, key):
        batch = dgp.sample(spec, rng, cfg.n)
        counts = tail_core.exceedance_counts(batch.values, range(ks[0], ks[-1] + 2))
        return counts

    res, failed = _run_replicates(cfg, [(i,) for i in range(cfg.replicates)], rep)
    rows = []
    for j, k in enumerate(ks):
        vals, deg = [], 0
        for c in res:
            if c is None:
                continue
            b, d = tail_core._log_ratio(int(c[j]), int(c[j + 1]))
            vals.append(b)
            deg += d
        rows.append([k, dgp.beta_k_exact(spec, k)] + _summary_row(vals, cfg.level) + [deg])
    f = write_csv(out / "bias_variance.csv",
                  ["k", "beta_k_exact"] + SUMMARY_COLS + ["n_degenerate"], rows)
    return [f], failed


def _loglog(cfg, out):
    spec, atom, t_grid, beta = _setup_loglog(cfg)
    times = np.minimum(np.floor(cfg.n * t_grid).astype(np.int64), cfg.n)

    def rep(rng, key):
        traj = chains.simulate(spec, cfg.n, rng)
        counts = chains.occupation_counts(traj, atom, times)
        return counts

    res, failed = _run_replicates(cfg, [(i,) for i in range(cfg.replicates)], rep)
    ok = [c for c in res if c is not None]
    rows = []
    for j, t in enumerate(t_grid):
        logs = [math.log(c[j]) if c[j] > 0 else float("nan") for c in ok]
        sig = [c[j] / cfg.n ** beta for c in ok]
        rows.append([t, math.log(times[j]), beta * math.log(times[j])]
                    + _summary_row(logs, cfg.level) + _summary_row(sig, cfg.level)[:3])
    files = [write_csv(out / "loglog.csv",
                       ["t", "log_time", "reference", "mean_log_occupation", "q_lo", "q_hi", "sd",
                        "count", "mean_sigma", "sigma_q_lo", "sigma_q_hi"], rows)]
    bt = []
    for i, c in enumerate(res):
        if c is not None and c[-1] > 0:
            bt.append([i, int(c[-1]), chains.beta_tilde_from_count(int(c[-1]), cfg.n)])
    files.append(write_csv(out / "beta_tilde.csv", ["replicate", "occupation", "beta_tilde"], bt))
    files.append(write_csv(out / "beta_tilde_summary.csv", SUMMARY_COLS,
                           [_summary_row([r[2] for r in bt], cfg.level)]))
    return files, failed


def _markov(cfg, out):
    specs = _setup_markov(cfg)
    keys = []
    for ci, s in enumerate(specs):
        reps = int(cfg.params.get("replicates_per_chain", {}).get(s.kind, cfg.replicates))
        keys.extend((ci, i) for i in range(reps))

    def rep(rng, key):
        spec = specs[key[0]]
        summary = chains.stream_blocks(spec, cfg.n, rng)
        est = chains.beta_hat_from_blocks(summary.blocks)
        bt = chains.beta_tilde_from_count(summary.occupation, cfg.n)
        return est, bt

    res, failed = _run_replicates(cfg, keys, rep)
    est_rows, summ, hist = [], [], []
    for ci, spec in enumerate(specs):
        label = f"{spec.kind}" + (f"_delta{spec.delta}" if spec.kind == "bessel" else "")
        mine = [(key, r) for key, r in zip(keys, res) if key[0] == ci and r is not None]
        for key, (est, bt) in mine:
            est_rows.append([label, key[1], est.n, est.k, est.beta_hat, bt, est.degenerate])
        for name, vals in (("beta_hat", [r[0].beta_hat for _, r in mine]),
                           ("beta_tilde", [r[1] for _, r in mine])):
            if not vals:
                continue
            summ.append([label, name, spec.beta] + _summary_row(vals, cfg.level))
            hist.extend([label, name, lo, hi, c] for lo, hi, c in histogram(vals))
    files = [
        write_csv(out / "markov_estimates.csv",
                  ["chain", "replicate", "N_n", "k", "beta_hat", "beta_tilde", "degenerate"], est_rows),
        write_csv(out / "markov_summary.csv", ["chain", "estimator", "target"] + SUMMARY_COLS, summ),
        write_csv(out / "markov_histogram.csv",
                  ["chain", "estimator", "bin_lo", "bin_hi", "count"], hist),
    ]
    return files, failed


def _split(cfg, out):
    spec, kernel, grid = _setup_split(cfg)
    audit = bool(cfg.params.get("audit", False))
    k_scan = cfg.params.get("k_range")

    def rep(rng, key):
        traj = chains.simulate(spec, cfg.n, rng)
        r = nummelin.estimate_beta_split(traj, kernel, grid, rng)
        ks = range(int(k_scan[0]), int(k_scan[1]) + 1) if k_scan else range(1, r.estimate.k + 3)
        scan = tail_core.stability_scan(r.split.durations, ks, cfg.level)
        keep_traj = traj if (audit and key[0] == 0) else None
        return r, scan, keep_traj

    res, failed = _run_replicates(cfg, [(i,) for i in range(cfg.replicates)], rep)
    rows, files = [], []
    for i, item in enumerate(res):
        if item is None:
            continue
        r = item[0]
        rows.append([i, r.x0, r.eps, float(r.curve[np.argmax(r.curve[:, 1]), 1]),
                     r.split.n_blocks, r.estimate.k, r.estimate.beta_hat, r.estimate.degenerate])
    files.append(write_csv(out / "split_estimates.csv",
                           ["replicate", "x0", "eps", "expected_blocks", "N_n", "k", "beta_hat",
                            "degenerate"], rows))
    first = next(x for x in res if x is not None)
    r0, scan0, traj0 = first
    files.append(write_csv(out / "epsilon_curve.csv", ["epsilon", "expected_blocks"], r0.curve.tolist()))
    files.append(write_csv(out / "split_scan.csv", tail_core.SCAN_HEADER,
                           [[getattr(s, c) for c in tail_core.SCAN_HEADER] for s in scan0]))
    hits = r0.split.pseudo_hit_times
    files.append(write_csv(out / "split_blocks.csv", ["j", "hit_time", "duration"],
                           [[j + 1, hits[j], hits[j + 1] - hits[j]] for j in range(hits.size - 1)]))
    if traj0 is not None:
        files.append(write_audit(out / "split_audit.csv", traj0, r0))
    return files, failed


def write_audit(path, traj: chains.Trajectory, r: nummelin.SplitEstimate) -> Path:
    """Rows (i, X_i, in_K, Y_i); Y_i is blank away from the small set."""
    y = dict(zip(r.split.visit_times.tolist(), r.split.y_flags.tolist()))
    in_k = r.small.contains(traj.states)
    rows = ([i, traj.states[i], bool(in_k[i]), y.get(i)] for i in range(traj.states.size))
    return write_csv(path, ["i", "X_i", "in_K", "Y_i"], rows)


def _averaged(cfg, out):
    spec, k, ms = _setup_averaged(cfg)

    def rep(rng, key):
        batch = dgp.sample(spec, rng, cfg.n)
        return [tail_core.beta_hat_averaged(batch, k, m) for m in ms]

    res, failed = _run_replicates(cfg, [(i,) for i in range(cfg.replicates)], rep)
    rows = []
    for j, m in enumerate(ms):
        vals = [r[j].beta_hat for r in res if r is not None]
        deg = sum(r[j].degenerate for r in res if r is not None)
        target = math.fsum(dgp.beta_k_exact(spec, k + i) for i in range(-m, m + 1)) / (2 * m + 1)
        rows.append([m, k, target] + _summary_row(vals, cfg.level) + [deg])
    f = write_csv(out / "averaged.csv",
                  ["m", "k", "beta_km_exact"] + SUMMARY_COLS + ["n_degenerate"], rows)
    return [f], failed


def _positive(cfg, out):
    spec = _setup_positive(cfg)

    def rep(rng, key):
        summary = chains.stream_blocks(spec, cfg.n, rng)
        est = chains.beta_hat_from_blocks(summary.blocks)
        target = dgp.beta_k_exact(spec.eta, est.k)
        p_k = dgp.tail_prob(spec.eta, est.k)
        z = math.sqrt(est.n * p_k) * (est.beta_hat - target)
        zs = tail_core.studentized_statistic(est, target)
        return est, target, z, zs

    res, failed = _run_replicates(cfg, [(i,) for i in range(cfg.replicates)], rep)
    rows = [[i, r[0].n, r[0].k, r[0].beta_hat, r[1], r[2], r[3], r[0].degenerate]
            for i, r in enumerate(res) if r is not None]
    summ = []
    for name, col, ref in (("beta_hat", 3, None), ("z_oracle", 5, math.expm1(spec.eta.beta)),
                           ("z_studentized", 6, 1.0)):
        vals = [r[col] for r in rows]
        var = float(np.var(vals, ddof=1)) if len(vals) > 1 else float("nan")
        summ.append([name] + _summary_row(vals, cfg.level) + [var, ref])
    files = [
        write_csv(out / "positive_recurrent.csv",
                  ["replicate", "N_n", "k", "beta_hat", "beta_k_exact", "z_oracle", "z_studentized",
                   "degenerate"], rows),
        write_csv(out / "positive_recurrent_summary.csv",
                  ["statistic"] + SUMMARY_COLS + ["variance", "reference_variance"], summ),
    ]
    return files, failed


_SCENARIO_RUN = {
    "iid_scan": _iid_scan,
    "bias_variance": _bias_variance,
    "loglog_occupation": _loglog,
    "markov_kde": _markov,
    "split_chain": _split,
    "averaged_estimator": _averaged,
    "positive_recurrent": _positive,
}


def replicate_keys(cfg: ScenarioConfig) -> list[list[int]]:
    if cfg.scenario == "markov_kde":
        keys = []
        for ci, s in enumerate(_setup_markov(cfg)):
            reps = int(cfg.params.get("replicates_per_chain", {}).get(s.kind, cfg.replicates))
            keys.extend([cfg.seed, ci, i] for i in range(reps))
        return keys
    return [[cfg.seed, i] for i in range(cfg.replicates)]


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path) -> RunManifest:
    """Run all replicates of a scenario, write CSVs and ``manifest.json`` to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files, failed = _SCENARIO_RUN[cfg.scenario](cfg, out)
    manifest = RunManifest(
        config=cfg.to_dict(),
        version=__version__,
        seeds=replicate_keys(cfg),
        outputs=[str(Path(f).name) for f in files],
        wall_clock_s=time.perf_counter() - t0,
        failed=failed,
    )
    manifest.write(out / "manifest.json")
    return manifest
