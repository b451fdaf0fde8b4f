"""Symmetric frequency sampling distributions.

A distribution is defined by a one-sided magnitude density ``q(r)`` on
``r >= 0``. Draws take a uniformly random sign times a magnitude from ``q``,
so the two-sided density is ``p(omega) = q(|omega|) / 2`` and
``p(omega) == p(-omega)`` holds by construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


def as_generator(seed) -> np.random.Generator:
    """Accept a Generator, a SeedSequence, an int or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class SamplingDistribution:
    """Base class: subclasses define the magnitude sampler and density."""

    kind = "abstract"
    #: one-sided support intervals ``[(lo, hi), ...]`` of the magnitude
    intervals: tuple[tuple[float, float], ...]

    @property
    def bounded(self) -> bool:
        return all(np.isfinite(hi) for _, hi in self.intervals)

    def magnitude_density(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def magnitude_ppf(self, u: np.ndarray) -> np.ndarray:
        """Inverse CDF of the magnitude."""
        raise NotImplementedError

    def magnitude_cdf(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def density(self, omega) -> np.ndarray | float:
        """Two-sided density; zero outside the support."""
        w = np.asarray(omega, dtype=float)
        out = 0.5 * self.magnitude_density(np.abs(w))
        return float(out) if out.ndim == 0 else out

    def cdf(self, omega) -> np.ndarray:
        """Two-sided CDF, used for goodness-of-fit checks."""
        w = np.asarray(omega, dtype=float)
        half = 0.5 * self.magnitude_cdf(np.abs(w))
        return np.where(w >= 0, 0.5 + half, 0.5 - half)

    def draw(self, seed, count: int) -> np.ndarray:
        """`count` i.i.d. frequencies; deterministic for a given seed state."""
        if count < 1:
            raise ValueError("count must be >= 1")
        rng = as_generator(seed)
        u = rng.random((count, 2))
        sign = np.where(u[:, 0] < 0.5, -1.0, 1.0)
        return sign * self.magnitude_ppf(u[:, 1])

    def support_mask(self, omega) -> np.ndarray:
        r = np.abs(np.asarray(omega, dtype=float))
        mask = np.zeros(r.shape, dtype=bool)
        for lo, hi in self.intervals:
            mask |= (r >= lo) & (r <= hi)
        return mask

    def describe(self) -> dict:
        return {"kind": self.kind, "support": [list(iv) for iv in self.intervals]}


class LogUniform(SamplingDistribution):
    """Magnitude log-uniform on ``[lo, hi]``, i.e. ``10**U(log10 lo, log10 hi)``."""

    kind = "log-uniform"

    def __init__(self, lo: float, hi: float):
        lo, hi = float(lo), float(hi)
        if not (0 < lo < hi < np.inf):
            raise ValueError(f"log-uniform needs 0 < lo < hi < inf, got [{lo}, {hi}]")
        self.lo, self.hi = lo, hi
        self.a, self.b = np.log10(lo), np.log10(hi)
        self.intervals = ((lo, hi),)

    def magnitude_density(self, r):
        r = np.asarray(r, dtype=float)
        inside = (r >= self.lo) & (r <= self.hi)
        with np.errstate(divide="ignore"):
            val = 1.0 / (r * np.log(10.0) * (self.b - self.a))
        return np.where(inside, val, 0.0)

    def magnitude_ppf(self, u):
        return 10.0 ** (self.a + (self.b - self.a) * np.asarray(u))

    def magnitude_cdf(self, r):
        r = np.clip(np.asarray(r, dtype=float), self.lo, self.hi)
        return (np.log10(r) - self.a) / (self.b - self.a)


class Uniform(SamplingDistribution):
    """Magnitude uniform on ``[lo, hi]`` (``lo = 0`` gives uniform on ``[-hi, hi]``)."""

    kind = "uniform"

    def __init__(self, lo: float, hi: float):
        lo, hi = float(lo), float(hi)
        if not (0 <= lo < hi < np.inf):
            raise ValueError(f"uniform needs 0 <= lo < hi < inf, got [{lo}, {hi}]")
        self.lo, self.hi = lo, hi
        self.intervals = ((lo, hi),)

    def magnitude_density(self, r):
        r = np.asarray(r, dtype=float)
        return np.where((r >= self.lo) & (r <= self.hi), 1.0 / (self.hi - self.lo), 0.0)

    def magnitude_ppf(self, u):
        return self.lo + (self.hi - self.lo) * np.asarray(u)

    def magnitude_cdf(self, r):
        r = np.clip(np.asarray(r, dtype=float), self.lo, self.hi)
        return (r - self.lo) / (self.hi - self.lo)


class Cauchy(SamplingDistribution):
    """``p(omega) = scale / (pi (scale^2 + omega^2))`` over the whole real line."""

    kind = "cauchy"

    def __init__(self, scale: float = 1.0):
        if not scale > 0:
            raise ValueError("scale must be positive")
        self.scale = float(scale)
        self.intervals = ((0.0, np.inf),)

    def magnitude_density(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r >= 0, 2 * self.scale / (np.pi * (self.scale**2 + r**2)), 0.0)

    def magnitude_ppf(self, u):
        return self.scale * np.tan(0.5 * np.pi * np.asarray(u))

    def magnitude_cdf(self, r):
        return 2 / np.pi * np.arctan(np.maximum(np.asarray(r, dtype=float), 0) / self.scale)


class TabulatedInverseCDF(SamplingDistribution):
    """Magnitude drawn through a piecewise-linear inverse CDF.

    The table maps probability levels ``levels[0] = 0 < ... < levels[-1] = 1``
    to magnitudes ``knots``. Linear interpolation of the inverse CDF makes the
    magnitude density piecewise constant, ``diff(levels) / diff(knots)``,
    which is exactly what :meth:`magnitude_density` reports.
    """

    kind = "inverse-cdf"

    def __init__(self, levels, knots):
        levels = np.asarray(levels, dtype=float).ravel()
        knots = np.asarray(knots, dtype=float).ravel()
        if levels.size != knots.size:
            raise ValueError("levels and knots differ in length")
        if levels.size < 3:
            raise ValueError("inverse-CDF table needs at least 3 knots")
        if np.any(np.diff(levels) <= 0) or np.any(np.diff(knots) <= 0):
            raise ValueError("inverse-CDF table must be strictly monotone")
        if not (np.isclose(levels[0], 0.0) and np.isclose(levels[-1], 1.0)):
            raise ValueError("probability levels must run from 0 to 1")
        if knots[0] < 0:
            raise ValueError("magnitudes must be nonnegative")
        levels[0], levels[-1] = 0.0, 1.0
        self.levels, self.knots = levels, knots
        self._heights = np.diff(levels) / np.diff(knots)
        self.intervals = ((float(knots[0]), float(knots[-1])),)

    def magnitude_density(self, r):
        r = np.asarray(r, dtype=float)
        idx = np.clip(np.searchsorted(self.knots, r, side="right") - 1, 0, self._heights.size - 1)
        inside = (r >= self.knots[0]) & (r <= self.knots[-1])
        return np.where(inside, self._heights[idx], 0.0)

    def magnitude_ppf(self, u):
        return np.interp(u, self.levels, self.knots)

    def magnitude_cdf(self, r):
        return np.interp(r, self.knots, self.levels)


def inverse_cdf_sampler(levels, knots) -> TabulatedInverseCDF:
    """Distribution sampled by inverting a tabulated monotone CDF."""
    return TabulatedInverseCDF(levels, knots)


def proportional_to_magnitude(omegas, weights) -> TabulatedInverseCDF:
    """Approximate ``p(omega) = tau |w(omega)|`` from tabulated magnitudes.

    `omegas` must be increasing and nonnegative; ``tau`` comes from trapezoidal
    quadrature of the weights. Intervals with zero weight are lifted to a tiny
    floor so that the tabulated CDF stays strictly monotone.
    """
    omegas = np.asarray(omegas, dtype=float).ravel()
    weights = np.abs(np.asarray(weights, dtype=float).ravel())
    if omegas.size != weights.size:
        raise ValueError("omegas and weights differ in length")
    areas = 0.5 * (weights[1:] + weights[:-1]) * np.diff(omegas)
    total = areas.sum()
    if not total > 0:
        raise ValueError("weights integrate to zero")
    areas = np.maximum(areas, 1e-12 * total)
    cdf = np.concatenate([[0.0], np.cumsum(areas)])
    return TabulatedInverseCDF(cdf / cdf[-1], omegas)


def read_weight_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Two-column CSV (omega, weight); a non-numeric header row is skipped."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                if rows:
                    raise
    arr = np.array(rows, dtype=float)
    return arr[:, 0], arr[:, 1]


def log_uniform_cdf_table(lo: float, hi: float, knots: int = 64) -> TabulatedInverseCDF:
    """Log-uniform magnitude CDF tabulated at log-spaced knots."""
    r = np.logspace(np.log10(lo), np.log10(hi), knots)
    return TabulatedInverseCDF(np.linspace(0.0, 1.0, knots), r)


def from_spec(spec: dict) -> SamplingDistribution:
    """Build a distribution from a config mapping.

    Recognized kinds: ``log-uniform`` and ``uniform`` (``support: [lo, hi]``),
    ``cauchy`` (``scale``), ``inverse-cdf`` (``levels``, ``knots``),
    ``proportional-to-magnitude`` (``table``: CSV path).
    """
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "log-uniform":
        lo, hi = spec.pop("support")
        dist = LogUniform(lo, hi)
    elif kind == "uniform":
        lo, hi = spec.pop("support")
        dist = Uniform(lo, hi)
    elif kind == "cauchy":
        dist = Cauchy(spec.pop("scale", 1.0))
    elif kind == "inverse-cdf":
        dist = TabulatedInverseCDF(spec.pop("levels"), spec.pop("knots"))
    elif kind == "proportional-to-magnitude":
        dist = proportional_to_magnitude(*read_weight_table(spec.pop("table")))
    else:
        raise ValueError(f"unknown distribution kind {kind!r}")
    if spec:
        raise ValueError(f"unknown distribution keys: {sorted(spec)}")
    return dist


@dataclass
class VarianceCheck:
    satisfied: bool
    worst_ratio: float
    tail_slope: float
    note: str = ""

    def __bool__(self):
        return self.satisfied


def check_variance_condition(dist: SamplingDistribution, f_magnitude, omegas,
                             slope_tol: float = 0.1) -> VarianceCheck:
    """Grid heuristic for ``|Re f| / sqrt(p) = O(1 / (|omega| + 1))``.

    Bounded supports pass unconditionally. Otherwise the scaled ratio
    ``|Re f| / sqrt(p) * (|omega| + 1)`` is evaluated on the grid and its
    log-log slope over the largest fifth of the grid decides boundedness.
    """
    w = np.abs(np.asarray(omegas, dtype=float).ravel())
    w = np.unique(w)
    p = dist.density(w)
    fm = np.abs(np.asarray([f_magnitude(x) for x in w], dtype=float))
    keep = p > 0
    w, p, fm = w[keep], p[keep], fm[keep]
    ratio = fm / np.sqrt(p) * (w + 1.0)
    worst = float(ratio.max()) if ratio.size else 0.0
    if dist.bounded:
        return VarianceCheck(True, worst, 0.0, "support is bounded; condition holds trivially")
    if worst == 0.0:
        return VarianceCheck(True, 0.0, 0.0, "integrand vanishes on the grid")
    tail = slice(int(0.8 * w.size), None)
    wt, rt = w[tail], ratio[tail]
    good = (wt > 0) & (rt > 0)
    if good.sum() < 2:
        return VarianceCheck(True, worst, 0.0, "too few tail points with nonzero ratio")
    slope = float(np.polyfit(np.log(wt[good]), np.log(rt[good]), 1)[0])
    return VarianceCheck(slope <= slope_tol, worst, slope,
                         f"tail log-log slope {slope:.3g} (tolerance {slope_tol})")
