"""Command-line entry point: ``sh2opt {optimize,bode,verify,h2norm,grad-check}``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import Benchmark, make_problem
from .config import ConfigError, RunConfig, dump_config, load_config
from .estimator import repeated_estimates
from .optimizer import RunRecord, policy_from_spec, sgd_run
from .sampling import from_spec
from .verify import SUITES, run_suite

THREADS_ENV = "SH2OPT_THREADS"


def _threads(args) -> int:
    if getattr(args, "threads", None):
        os.environ[THREADS_ENV] = str(args.threads)
        return args.threads
    return int(os.environ.get(THREADS_ENV, "1"))


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "trials", None) is not None:
        cfg.trials = args.trials
    if getattr(args, "out", None) is not None:
        cfg.output = args.out
    return cfg


def _problem(cfg: RunConfig) -> Benchmark:
    opts = dict(cfg.problem_options)
    if cfg.mu0 is not None:
        opts["mu0"] = cfg.mu0
    return make_problem(cfg.problem, **opts)


def _mu(args, bench: Benchmark) -> np.ndarray:
    return bench.mu0 if args.mu is None else np.asarray(args.mu, dtype=float)


# --------------------------------------------------------------------------
# optimize


def _summary_rows(records: list[RunRecord]):
    ks = sorted({k for r in records for k in r.checkpoints})
    for k in ks:
        vals = np.array([r.checkpoints[k] for r in records if k in r.checkpoints])
        yield [k, len(vals), repr(float(vals.mean())), repr(float(vals.min())), repr(float(vals.max()))]


def cmd_optimize(args) -> int:
    cfg = _load(args)
    threads = _threads(args)
    bench = _problem(cfg)
    dist = from_spec(cfg.distribution)
    policy = policy_from_spec(cfg.policy)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    gradient = None
    if cfg.exact_gradient:
        from .oracle import exact_gradient

        def gradient(m):
            return exact_gradient(bench.family, m)

    def one(t):
        try:
            return sgd_run(bench.family, bench.mu0, policy, dist, cfg.M, cfg.N, cfg.seed, trial=t,
                           cost=bench.cost, checkpoint_every=cfg.checkpoint_every,
                           divergence_bound=cfg.divergence_bound, project=cfg.project, gradient=gradient,
                           workers=1 if threads > 1 else None)
        except Exception as exc:  # recorded per trial; other trials keep running
            return exc

    if threads > 1 and cfg.trials > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(cfg.trials)))
    else:
        results = [one(t) for t in range(cfg.trials)]

    records, failures = [], {}
    for t, res in enumerate(results):
        if isinstance(res, Exception):
            failures[t] = f"{type(res).__name__}: {res}"
            continue
        res.metadata.update(config_digest=cfg.digest(), version=__version__, policy=policy.to_dict())
        res.write(out / f"trial_{t:03d}")
        records.append(res)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "trials", "mean_cost", "min_cost", "max_cost"])
        w.writerows(_summary_rows(records))
    meta = dict(version=__version__, seed=cfg.seed, trials=cfg.trials, config_digest=cfg.digest(),
                trial_files=[f"trial_{r.trial:03d}.csv" for r in records], summary="summary.csv",
                terminations={str(r.trial): r.termination for r in records}, failures=failures)
    with open(out / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    for r in records:
        last = max(r.checkpoints) if r.checkpoints else None
        cost = f" cost {r.checkpoints[last]:.6g}" if last is not None else ""
        mu = np.array2string(r.final, precision=6)
        print(f"trial {r.trial}: {r.termination} after {r.iterations} steps;{cost} mu = {mu}")
    for t, msg in failures.items():
        print(f"trial {t}: failed: {msg}", file=sys.stderr)
    return 1 if failures else 0


# --------------------------------------------------------------------------
# bode


def cmd_bode(args) -> int:
    cfg = _load(args)
    bench = _problem(cfg)
    mu = _mu(args, bench)
    if args.omegas:
        omegas = np.asarray(args.omegas, dtype=float)
    else:
        omegas = np.logspace(math.log10(args.lo), math.log10(args.hi), args.points)
    system = bench.family.system(mu)
    ny, nu = bench.family.shape
    rows = []
    for w in omegas:
        try:
            G = system.freqresp(np.array([w]))[0]
            mag = np.abs(G).ravel()
            err = "" if np.all(np.isfinite(mag)) else "non-finite response"
        except Exception as exc:  # per-point failures are reported, not fatal
            mag = np.full(ny * nu, np.nan)
            err = f"{type(exc).__name__}: {exc}"
        flagged = bool(err) or bool(np.any(mag > args.flag_above))
        rows.append((w, mag, flagged, err))
    out = sys.stdout if args.csv == "-" else open(args.csv, "w", newline="")
    try:
        w = csv.writer(out)
        w.writerow(["omega"] + [f"abs_G_{i}{j}" for i in range(ny) for j in range(nu)] + ["flagged", "error"])
        for omega, mag, flagged, err in rows:
            w.writerow([repr(float(omega))] + [repr(float(x)) for x in mag] + [int(flagged), err])
    finally:
        if out is not sys.stdout:
            out.close()
    n_flag = sum(r[2] for r in rows)
    if n_flag:
        print(f"{n_flag} point(s) flagged (magnitude above {args.flag_above:g} or evaluation failure)", file=sys.stderr)
    return 0


# --------------------------------------------------------------------------
# verify, h2norm, grad-check


def cmd_verify(args) -> int:
    kw = {} if args.seed is None else dict(seed=args.seed)
    res = run_suite(args.suite, **kw)
    print(res.report())
    return 0 if res.passed else 1


def cmd_h2norm(args) -> int:
    cfg = _load(args)
    bench = _problem(cfg)
    mu = _mu(args, bench)
    c = bench.cost(mu)
    norm = math.inf if math.isinf(c) else math.sqrt(2.0 * c)
    print(f"||G(mu)|| = {norm!r}  (cost {c!r}) at mu = {np.array2string(mu, precision=8)}")
    return 0


def _reference_gradient(bench: Benchmark, mu, h=1e-6):
    try:
        from .oracle import exact_gradient

        return exact_gradient(bench.family, mu), "Gramian oracle"
    except NotImplementedError:
        g = np.empty_like(mu)
        for j in range(mu.size):
            e = np.zeros_like(mu)
            e[j] = h * max(1.0, abs(mu[j]))
            g[j] = (bench.cost(mu + e) - bench.cost(mu - e)) / (2 * e[j])
        return g, "central differences of the checkpoint cost"


def cmd_grad_check(args) -> int:
    cfg = _load(args)
    _threads(args)
    bench = _problem(cfg)
    mu = _mu(args, bench)
    dist = from_spec(cfg.distribution)
    M = args.M or cfg.M
    est = repeated_estimates(bench.family, mu, dist, M, args.repetitions, seed=cfg.seed)
    mean = est.mean(axis=0)
    se = est.std(axis=0, ddof=1) / math.sqrt(args.repetitions)
    ref, how = _reference_gradient(bench, mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (mean - ref) / se, np.where(mean == ref, 0.0, np.inf))
    print(f"reference ({how}): {np.array2string(ref, precision=8)}")
    print(f"estimator mean (M={M}, {args.repetitions} repetitions): {np.array2string(mean, precision=8)}")
    print(f"standard error: {np.array2string(se, precision=3)}")
    print(f"z-scores: {np.array2string(z, precision=3)}")
    ok = bool(np.all(np.abs(z) <= args.k))
    print(f"{'PASS' if ok else 'FAIL'}: all |z| <= {args.k}")
    return 0 if ok else 1


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sh2opt", description="Stochastic H2 optimization of dynamical systems")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")

    p = sub.add_parser("optimize", help="run SGD trials from a configuration")
    common(p)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("bode", help="magnitude table of G(mu) for choosing a sampling support")
    common(p)
    p.add_argument("--mu", type=float, nargs="+", default=None)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--lo", type=float, default=1e-2)
    p.add_argument("--hi", type=float, default=1e4)
    p.add_argument("--omegas", type=float, nargs="+", default=None, help="explicit grid (overrides --lo/--hi)")
    p.add_argument("--flag-above", type=float, default=1e6, help="flag magnitudes above this value")
    p.add_argument("--csv", default="-", help="output file ('-' for stdout)")
    p.set_defaults(func=cmd_bode)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("suite", choices=sorted(SUITES))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("h2norm", help="oracle H2 norm of the configured system")
    common(p)
    p.add_argument("--mu", type=float, nargs="+", default=None)
    p.set_defaults(func=cmd_h2norm)

    p = sub.add_parser("grad-check", help="estimator mean vs reference gradient")
    common(p)
    p.add_argument("--mu", type=float, nargs="+", default=None)
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--repetitions", type=int, default=1000)
    p.add_argument("-k", type=float, default=4.0, help="z-score tolerance")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
