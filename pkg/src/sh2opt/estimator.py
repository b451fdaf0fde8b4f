"""Monte Carlo estimation of the H2 cost gradient from frequency samples."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .sampling import SamplingDistribution, as_generator
from .systems import ParametrizedSystem

#: per-sample records kept by default; beyond this only running sums survive
DEFAULT_RECORD_CAP = 100_000


class EstimateAborted(RuntimeError):
    """A frequency evaluation failed, so the whole estimate was discarded."""

    def __init__(self, omega, cause):
        self.omega = float(omega) if omega is not None else float("nan")
        super().__init__(f"gradient estimate aborted at omega={self.omega!r}: {cause}")


def integrand(ps: ParametrizedSystem, mu, omegas) -> np.ndarray:
    """Gradient integrand ``f_j = tr(G conj(dG_j)^T) / (2 pi)``.

    Returns a complex array of shape ``(len(omegas), n_params)``; a scalar
    `omegas` gives shape ``(n_params,)``.
    """
    scalar = np.ndim(omegas) == 0
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    G, dG = ps.freqresp_with_gradient(mu, w)
    f = np.einsum("mab,jmab->mj", G, np.conj(dG)) / (2 * np.pi)
    return f[0] if scalar else f


def _evaluate_terms(ps, mu, omegas, workers):
    """``Re f`` at each frequency, evaluated in contiguous chunks."""
    if workers is None:
        workers = int(os.environ.get("SH2OPT_THREADS", "1"))
    if workers <= 1 or omegas.size < 2 * workers:
        return np.real(integrand(ps, mu, omegas))
    chunks = np.array_split(omegas, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: np.real(integrand(ps, mu, c)), chunks))
    return np.concatenate(parts, axis=0)


@dataclass
class GradientEstimate:
    """M-sample estimate of the gradient of ``c(mu) = ||G(mu)||^2 / 2``.

    ``omegas``, ``densities`` and ``re_f`` hold the first ``record_cap``
    samples; ``term_sum`` and ``term_sq_sum`` cover all of them.
    """

    estimate: np.ndarray
    omegas: np.ndarray
    densities: np.ndarray
    re_f: np.ndarray
    M: int
    seed: object = None
    term_sq_sum: np.ndarray = field(default=None, repr=False)

    @property
    def complete(self) -> bool:
        return self.omegas.size == self.M

    def recompute(self) -> np.ndarray:
        """Rebuild the estimate from the stored sample records."""
        if not self.complete:
            raise ValueError("sample records were capped; cannot recompute")
        return np.sum(self.re_f / self.densities[:, None], axis=0) / self.M

    @property
    def sample_variance(self) -> np.ndarray:
        """Per-component variance of a single weighted term ``Re f / p``."""
        if self.M < 2:
            return np.zeros_like(self.estimate)
        mean = self.estimate
        return np.maximum(self.term_sq_sum / self.M - mean**2, 0.0) * self.M / (self.M - 1)

    @property
    def standard_error(self) -> np.ndarray:
        return np.sqrt(self.sample_variance / self.M)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["omega", "p"] + [f"re_f_{j}" for j in range(self.re_f.shape[1])])
            for w, p, row in zip(self.omegas, self.densities, self.re_f):
                writer.writerow([repr(float(w)), repr(float(p))] + [repr(float(x)) for x in row])


def estimate_gradient(ps: ParametrizedSystem, mu, dist: SamplingDistribution, M: int, seed=None, *,
                      workers: int | None = None, record_cap: int = DEFAULT_RECORD_CAP) -> GradientEstimate:
    """Average of ``Re f(mu; i omega_m) / p(omega_m)`` over `M` seeded draws.

    All frequencies are drawn up front from one generator, so the result does
    not depend on `workers`; terms are summed in sample order.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    mu = ps.check_domain(mu)
    rng = as_generator(seed)
    omegas = dist.draw(rng, M)
    dens = np.asarray(dist.density(omegas), dtype=float)
    try:
        re_f = _evaluate_terms(ps, mu, omegas, workers)
    except ArithmeticError as exc:
        raise EstimateAborted(getattr(exc, "omega", None), exc) from exc
    if not np.all(np.isfinite(re_f)):
        bad = int(np.argmax(~np.all(np.isfinite(re_f), axis=1)))
        raise EstimateAborted(omegas[bad], "non-finite frequency response")
    terms = re_f / dens[:, None]
    est = np.sum(terms, axis=0) / M
    keep = min(M, record_cap)
    return GradientEstimate(est, omegas[:keep], dens[:keep], re_f[:keep], M, seed,
                            term_sq_sum=np.sum(terms**2, axis=0))


@dataclass
class BiasProbe:
    bias: np.ndarray
    standard_error: np.ndarray
    mean: np.ndarray
    estimates: np.ndarray = field(repr=False)

    def within(self, k: float) -> np.ndarray:
        """Componentwise ``|bias| <= k * SE`` (exact zero bias always passes)."""
        return np.abs(self.bias) <= k * self.standard_error


def repeated_estimates(ps, mu, dist, M, repetitions, seed=0, **kw) -> np.ndarray:
    """`repetitions` independent estimates, each from its own spawned seed."""
    children = np.random.SeedSequence(seed).spawn(repetitions)
    return np.stack([estimate_gradient(ps, mu, dist, M, s, **kw).estimate for s in children])


def estimator_bias_probe(ps, mu, dist, M, repetitions, oracle_gradient, seed=0, **kw) -> BiasProbe:
    """Mean of repeated estimates minus the exact gradient, with its standard error."""
    est = repeated_estimates(ps, mu, dist, M, repetitions, seed, **kw)
    mean = est.mean(axis=0)
    se = est.std(axis=0, ddof=1) / np.sqrt(repetitions) if repetitions > 1 else np.zeros_like(mean)
    return BiasProbe(mean - np.asarray(oracle_gradient, dtype=float), se, mean, est)
