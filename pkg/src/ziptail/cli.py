"""Command line entry point: ``ziptail estimate | simulate | mc``.

Exit codes: 0 success, 2 configuration or input error, 3 runtime/statistical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import chains, dgp, experiments, tail_core
from .io import fmt, load_json, read_batch, write_csv, write_values

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class UsageError(ValueError):
    pass


def _estimate(args) -> int:
    try:
        batch = read_batch(args.input)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ks = [args.k] if args.k is not None else list(range(args.k_range[0], args.k_range[1] + 1))
    oracle = None
    if args.oracle_spec:
        oracle = dgp.HeavyTailSpec.from_dict(load_json(args.oracle_spec))
    header = list(tail_core.SCAN_HEADER)
    if args.delta is not None:
        header += ["bound", "bound_applicable", "bound_mode"]
    if args.avg_m:
        header.append("m")
    rows = []
    for k in ks:
        if args.avg_m:
            est = tail_core.beta_hat_averaged(batch, k, args.avg_m)
            # no variance formula is used for the averaged estimator
            lo = hi = float("nan")
        else:
            est = tail_core.beta_hat(batch, k)
            if est.degenerate or est.p_hat_k == 0:
                lo = hi = float("nan")
            else:
                est = tail_core.attach_ci(est, args.ci)
                lo, hi = est.ci[0], est.ci[1]
        row = [k, est.beta_hat, lo, hi, est.p_hat_k, est.p_hat_k1, est.degenerate]
        if args.delta is not None:
            top = k + args.avg_m + 1
            if oracle is not None:
                p, mode = dgp.tail_prob(oracle, top), "oracle"
            else:
                p = tail_core.empirical_survival(batch, [top]).probs[0]
                mode = "plug-in"
            if p > 0:
                b = tail_core.deviation_bound(batch.n, args.delta, p)
                row += [b.bound, b.applicable, mode]
            else:
                row += [float("nan"), False, mode]
        if args.avg_m:
            row.append(args.avg_m)
        rows.append(row)
    if args.out:
        write_csv(args.out, header, rows)
    else:
        _print_csv(header, rows)
    return EXIT_OK


def _print_csv(header, rows):
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])


def _simulate(args) -> int:
    d = load_json(args.spec)
    rng = np.random.default_rng(args.seed)
    if "beta" in d or d.get("kind") == "zeta":
        spec = dgp.spec_from_dict(d)
        draw = dgp.sample_zeta if isinstance(spec, dgp.ZetaSpec) else dgp.sample
        write_values(args.out, draw(spec, rng, args.n).values)
        return EXIT_OK
    try:
        spec = chains.ChainSpec.from_dict(d)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    traj = chains.simulate(spec, args.n, rng)
    write_values(args.out, traj.states)
    if args.blocks:
        blocks = chains.regeneration_times(traj, spec.default_atom())
        h = blocks.hit_times
        write_csv(args.blocks, ["j", "hit_time", "duration"],
                  [[j + 1, h[j], h[j + 1] - h[j]] for j in range(h.size - 1)])
    return EXIT_OK


def _mc(args) -> int:
    cfg = experiments.ScenarioConfig.from_json(args.config)
    if args.workers:
        cfg.workers = args.workers
    manifest = experiments.run_scenario(cfg, args.out_dir)
    print(json.dumps({"outputs": manifest.outputs, "failed": len(manifest.failed),
                      "wall_clock_s": round(manifest.wall_clock_s, 3)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ziptail", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="tail index of an integer sample")
    e.add_argument("--input", required=True, help="newline-delimited positive integers")
    g = e.add_mutually_exclusive_group(required=True)
    g.add_argument("--k", type=int)
    g.add_argument("--k-range", type=int, nargs=2, metavar=("A", "B"))
    e.add_argument("--avg-m", type=int, default=0, help="average over levels k-m..k+m")
    e.add_argument("--ci", type=float, default=0.95, help="confidence level")
    e.add_argument("--delta", type=float, help="also report the deviation bound at this delta")
    e.add_argument("--oracle-spec", help="heavy-tail spec JSON giving the true p_{k+1} for the bound")
    e.add_argument("--out")
    e.set_defaults(func=_estimate)

    s = sub.add_parser("simulate", help="draw a sample or a chain trajectory")
    s.add_argument("--spec", required=True, help="heavy-tail, zeta or chain spec JSON")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--blocks", help="chains only: write j,hit_time,duration CSV here")
    s.set_defaults(func=_simulate)

    m = sub.add_parser("mc", help="run a Monte-Carlo scenario from a JSON config")
    m.add_argument("--config", required=True)
    m.add_argument("--out-dir", required=True)
    m.add_argument("--workers", type=int)
    m.set_defaults(func=_mc)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "n", 1) is not None and getattr(args, "n", 1) < 1:
            raise UsageError("--n must be >= 1")
        return args.func(args)
    except (experiments.ConfigError, dgp.SpecError, UsageError, OSError,
            json.JSONDecodeError) as exc:
        print(f"ziptail: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (chains.ChainError, experiments.RunAborted, ValueError, ArithmeticError) as exc:
        print(f"ziptail: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
