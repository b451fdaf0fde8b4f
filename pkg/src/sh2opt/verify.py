"""Statistical and cross-oracle verification suites.

Each suite returns a :class:`SuiteResult` whose ``lines`` summarize the
statistics behind the verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .benchmarks.scalar import gain_family, random_affine_family, random_stable_matrix
from .estimator import repeated_estimates
from .oracle import exact_cost, exact_gradient, h2_norm, h2_norm_quadrature, lemma_norm_xi_check
from .optimizer import (PowerLawStep, estimate_local_constants, probe_points, sgd_run, stability_budget,
                        validate_policy)
from .sampling import LogUniform
from .systems import DescriptorStateSpace


@dataclass
class SuiteResult:
    name: str
    passed: bool
    lines: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def report(self) -> str:
        head = f"[{'PASS' if self.passed else 'FAIL'}] {self.name}"
        return "\n".join([head] + [f"    {ln}" for ln in self.lines])


def unbiasedness(repetitions: int = 10_000, M: int = 10, k: float = 4.0, seed: int = 0,
                 support=(1e-4, 1e5)) -> SuiteResult:
    """Mean of repeated estimates vs the exact gradient on a random 8-state, 3-parameter family."""
    fam, mu = random_affine_family(n=8, n_params=3, seed=seed)
    g = exact_gradient(fam, mu)
    est = repeated_estimates(fam, mu, LogUniform(*support), M, repetitions, seed=seed + 1)
    mean = est.mean(axis=0)
    se = est.std(axis=0, ddof=1) / math.sqrt(repetitions)
    z = (mean - g) / se
    ok = bool(np.all(np.abs(z) <= k))
    lines = [f"exact    {np.array2string(g, precision=6)}",
             f"mean     {np.array2string(mean, precision=6)}",
             f"(mean-exact)/SE {np.array2string(z, precision=3)} (limit {k})"]
    return SuiteResult("unbiasedness", ok, lines, dict(z=z, exact=g, mean=mean, se=se))


def variance(repetitions: int = 10_000, M_small: int = 1, M_large: int = 10, bounds=(8.0, 12.5),
             seed: int = 0, support=(1e-4, 1e5)) -> SuiteResult:
    """Ratio of estimator variances for two sample counts; expected ``M_large / M_small``.

    The verdict requires the total (trace) ratio and every component ratio
    to lie within `bounds`.
    """
    fam, mu = random_affine_family(n=8, n_params=3, seed=seed)
    dist = LogUniform(*support)
    v1 = repeated_estimates(fam, mu, dist, M_small, repetitions, seed=seed + 2).var(axis=0, ddof=1)
    v2 = repeated_estimates(fam, mu, dist, M_large, repetitions, seed=seed + 3).var(axis=0, ddof=1)
    total = float(v1.sum() / v2.sum())
    comp = v1 / v2
    lo, hi = bounds
    ok = lo <= total <= hi and bool(np.all((comp >= lo) & (comp <= hi)))
    lines = [f"Var[M={M_small}]/Var[M={M_large}] total {total:.4f}, per component {np.array2string(comp, precision=4)}",
             f"accepted range [{lo}, {hi}]"]
    return SuiteResult("variance", ok, lines, dict(total=total, components=comp))


def stability(runs: int = 1000, N: int = 200, M: int = 1, delta: float = 0.1, epsilon: float = 1.0,
              mu0: float = 2.0, seed: int = 0, support=(1e-3, 1e3), checkpoint_every: int = 1,
              probe_repetitions: int = 400) -> SuiteResult:
    """Fraction of runs whose checkpointed costs stay within ``c(mu0) + sqrt(eps) + eps``.

    Constants are probed on the sublevel set of ``mu / (s + 1)`` and the
    policy ``a / (k + 1)`` is sized so that its infinite squared sum meets
    the budget and ``a <= 1/L``.
    """
    fam = gain_family()
    dist = LogUniform(*support)
    c0 = exact_cost(fam, [mu0])
    level = c0 + math.sqrt(epsilon) + epsilon
    radius = 2.0 * math.sqrt(level)  # c = mu^2 / 4 on the sublevel set
    consts = estimate_local_constants(fam, probe_points([-radius], [radius], count=16, seed=seed), dist, M=M,
                                      repetitions=probe_repetitions, seed=seed)
    sb = stability_budget(consts.K, consts.L, consts.sigma, delta, epsilon)
    # slightly inside the budget so rounding cannot push the sum over it
    a = min(sb.cap, math.sqrt(sb.budget * 6.0 / math.pi**2) * (1 - 1e-9))
    policy = PowerLawStep(a, p=1.0)
    report = validate_policy(policy, sb.budget, cap=sb.cap)
    inside = 0
    for t in range(runs):
        rec = sgd_run(fam, [mu0], policy, dist, M, N, seed=seed, trial=t,
                      cost=lambda m: exact_cost(fam, m), checkpoint_every=checkpoint_every)
        inside += all(c <= level for c in rec.checkpoints.values())
    frac = inside / runs
    target = (1 - delta) - 3 * math.sqrt((1 - delta) * delta / runs)
    ok = report.within_budget and report.within_cap and frac >= target
    lines = [f"probed K={consts.K:.4g} L={consts.L:.4g} sigma={consts.sigma:.4g} (heuristic)",
             f"R*={sb.R_star:.4g} budget={sb.budget:.4g} cap={sb.cap:.4g}; policy a/(k+1) with a={a:.4g}",
             str(report),
             f"runs inside level {level:.4g}: {inside}/{runs} = {frac:.4f} (need >= {target:.4f})"]
    return SuiteResult("stability", ok, lines, dict(fraction=frac, target=target, a=a, budget=sb.budget))


def lemma(checks: int = 100_000, max_dim: int = 8, seed: int = 0) -> SuiteResult:
    """Randomized checks of ``max_{xi in {0,1}} |x| |xi x + y| <= 2 (|x|^2 + |y|^2)``."""
    rng = np.random.default_rng(seed)
    failures = 0
    dims = rng.integers(1, max_dim + 1, size=checks)
    scales = 10.0 ** rng.uniform(-3, 3, size=(checks, 2))
    for d, (sx, sy) in zip(dims, scales):
        x = sx * rng.standard_normal(d)
        y = sy * rng.standard_normal(d)
        failures += not lemma_norm_xi_check(x, y)
    ok = failures == 0
    return SuiteResult("lemma", ok, [f"{checks - failures}/{checks} checks passed, dimensions 1-{max_dim}"],
                       dict(failures=failures))


def oracle_agreement(systems: int = 50, max_order: int = 20, rtol: float = 1e-4, seed: int = 0) -> SuiteResult:
    """Gramian vs quadrature H2 norms on random stable systems, plus ``||1/(s+1)||^2 = 1/2``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(systems):
        n = int(rng.integers(1, max_order + 1))
        m, p = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        sys = DescriptorStateSpace(random_stable_matrix(n, rng, margin=0.1, spread=10.0),
                                   rng.standard_normal((n, m)), rng.standard_normal((p, n)))
        gram = h2_norm(sys)
        quad = h2_norm_quadrature(sys, rtol=1e-10).norm
        worst = max(worst, abs(gram - quad) / gram)
    first = DescriptorStateSpace(np.array([[-1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    err = abs(h2_norm(first) ** 2 - 0.5)
    ok = worst <= rtol and err <= 1e-10
    lines = [f"worst relative Gramian/quadrature gap over {systems} systems: {worst:.3e} (limit {rtol})",
             f"| ||1/(s+1)||^2 - 0.5 | = {err:.3e} (limit 1e-10)"]
    return SuiteResult("oracle-agreement", ok, lines, dict(worst=worst, first_order_error=err))


SUITES = {
    "unbiasedness": unbiasedness,
    "variance": variance,
    "stability": stability,
    "lemma": lemma,
    "oracle-agreement": oracle_agreement,
}


def run_suite(name: str, **kw) -> SuiteResult:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; expected one of {sorted(SUITES)}")
    return SUITES[name](**kw)
