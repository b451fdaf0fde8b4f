"""Stochastic gradient descent on the H2 cost, step-size policies and stability budgets."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import zeta

from .estimator import EstimateAborted, estimate_gradient
from .sampling import SamplingDistribution
from .systems import ParameterDomainError, ParametrizedSystem

#: terms summed explicitly before switching to a closed-form tail
_HEAD = 100_000


# --------------------------------------------------------------------------
# step-size policies


class StepSizePolicy:
    """Step sizes ``alpha_k``, ``k = 0, 1, ...``, clipped to ``alpha_max``."""

    kind = "abstract"

    def __init__(self, alpha_max: float = math.inf):
        if not alpha_max > 0:
            raise ValueError("alpha_max must be positive")
        self.alpha_max = float(alpha_max)

    def raw(self, k: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, k: int) -> float:
        if k < 0:
            raise ValueError("iteration index must be >= 0")
        return float(self.steps_at(np.array([k]))[0])

    def steps_at(self, k) -> np.ndarray:
        return np.minimum(self.raw(np.asarray(k, dtype=float)), self.alpha_max)

    def steps(self, N: int) -> np.ndarray:
        """``alpha_0, ..., alpha_{N-1}``."""
        return self.steps_at(np.arange(N))

    def _tail_squares(self, start: int) -> float:
        """``sum_{k >= start} raw(k)^2``; ``inf`` when divergent."""
        raise NotImplementedError

    def decay_exponent(self) -> float | None:
        """``p`` with ``alpha_k = Theta(k^-p)``; ``inf`` for geometric decay, 0 for a constant tail."""
        raise NotImplementedError

    def sum_squares(self, horizon: int | None = None) -> float:
        """``sum_{k < horizon} alpha_k^2``, or the infinite sum when `horizon` is None.

        The infinite sum uses an explicit head plus a closed-form tail of the
        unclipped steps; it is exact whenever the cap is inactive in the tail.
        """
        if horizon is not None:
            return float(np.sum(self.steps(horizon) ** 2))
        head = float(np.sum(self.steps(_HEAD) ** 2))
        return head + self._tail_squares(_HEAD)

    def to_dict(self) -> dict:
        raise NotImplementedError


class ConstantStep(StepSizePolicy):
    kind = "constant"

    def __init__(self, alpha: float, alpha_max: float = math.inf):
        super().__init__(alpha_max)
        if alpha < 0:
            raise ValueError("step size must be >= 0")
        self.alpha = float(alpha)

    def raw(self, k):
        return np.full(np.shape(k), self.alpha)

    def _tail_squares(self, start):
        return 0.0 if self.alpha == 0 else math.inf

    def decay_exponent(self):
        return math.inf if self.alpha == 0 else 0.0

    def to_dict(self):
        return dict(kind=self.kind, alpha=self.alpha, alpha_max=self.alpha_max)


class PowerLawStep(StepSizePolicy):
    """``alpha_k = alpha0 / (k + offset)^p``."""

    kind = "power-law"

    def __init__(self, alpha0: float, p: float = 1.0, offset: float = 1.0, alpha_max: float = math.inf):
        super().__init__(alpha_max)
        if alpha0 < 0 or p < 0 or offset <= 0:
            raise ValueError("need alpha0 >= 0, p >= 0 and offset > 0")
        self.alpha0, self.p, self.offset = float(alpha0), float(p), float(offset)

    def raw(self, k):
        return self.alpha0 / (k + self.offset) ** self.p

    def _tail_squares(self, start):
        if self.alpha0 == 0:
            return 0.0
        if 2 * self.p <= 1:
            return math.inf
        return self.alpha0**2 * float(zeta(2 * self.p, start + self.offset))

    def decay_exponent(self):
        return self.p if self.alpha0 > 0 else math.inf

    def to_dict(self):
        return dict(kind=self.kind, alpha0=self.alpha0, p=self.p, offset=self.offset, alpha_max=self.alpha_max)


class PiecewiseStep(StepSizePolicy):
    """Constant levels up to breakpoints, then ``tail_scale * (tail_ref / k)^tail_power``.

    ``alpha_k = values[i]`` for ``breakpoints[i-1] < k <= breakpoints[i]``
    (with ``breakpoints[-1]`` meaning ``-inf``).
    """

    kind = "piecewise"

    def __init__(self, breakpoints, values, tail_scale: float, tail_ref: float | None = None,
                 tail_power: float = 1.0, alpha_max: float = math.inf):
        super().__init__(alpha_max)
        self.breakpoints = [int(b) for b in breakpoints]
        self.values = [float(v) for v in values]
        if len(self.breakpoints) != len(self.values) or not self.breakpoints:
            raise ValueError("need one value per breakpoint")
        if any(b2 <= b1 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must increase")
        if min(self.values) < 0 or tail_scale < 0 or tail_power < 0:
            raise ValueError("step sizes must be >= 0")
        self.tail_scale = float(tail_scale)
        self.tail_ref = float(tail_ref if tail_ref is not None else self.breakpoints[-1] + 1)
        self.tail_power = float(tail_power)

    def raw(self, k):
        k = np.asarray(k, dtype=float)
        last = self.breakpoints[-1]
        safe = np.maximum(k, last + 1)
        out = self.tail_scale * (self.tail_ref / safe) ** self.tail_power
        for b, v in zip(reversed(self.breakpoints), reversed(self.values)):
            out = np.where(k <= b, v, out)
        return out

    def _tail_squares(self, start):
        if self.tail_scale == 0:
            return 0.0
        if 2 * self.tail_power <= 1:
            return math.inf
        start = max(start, self.breakpoints[-1] + 1)
        c = self.tail_scale * self.tail_ref**self.tail_power
        return c**2 * float(zeta(2 * self.tail_power, start))

    def decay_exponent(self):
        return self.tail_power if self.tail_scale > 0 else math.inf

    def to_dict(self):
        return dict(kind=self.kind, breakpoints=self.breakpoints, values=self.values, tail_scale=self.tail_scale,
                    tail_ref=self.tail_ref, tail_power=self.tail_power, alpha_max=self.alpha_max)


class HalvingStep(StepSizePolicy):
    """``alpha_k = alpha0 * 2^(-floor(k / period))``."""

    kind = "halving"

    def __init__(self, alpha0: float, period: int, alpha_max: float = math.inf):
        super().__init__(alpha_max)
        if alpha0 < 0 or period < 1:
            raise ValueError("need alpha0 >= 0 and period >= 1")
        self.alpha0, self.period = float(alpha0), int(period)

    def raw(self, k):
        return self.alpha0 * 0.5 ** np.floor(np.asarray(k, dtype=float) / self.period)

    def _tail_squares(self, start):
        # remaining part of the current block, then whole blocks (ratio 1/4)
        block = start // self.period
        rest = (block + 1) * self.period - start
        a = self.alpha0 * 0.5**block
        return a * a * rest + (a * a / 4) * self.period / (1 - 0.25)

    def decay_exponent(self):
        return math.inf

    def to_dict(self):
        return dict(kind=self.kind, alpha0=self.alpha0, period=self.period, alpha_max=self.alpha_max)


class ExplicitStep(StepSizePolicy):
    """Listed step sizes; zero beyond the end of the list."""

    kind = "explicit"

    def __init__(self, values, alpha_max: float = math.inf):
        super().__init__(alpha_max)
        self.values = np.asarray(values, dtype=float).ravel()
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("step sizes must be finite and >= 0")

    def raw(self, k):
        k = np.asarray(k, dtype=int)
        padded = np.concatenate([self.values, [0.0]])
        return padded[np.minimum(k, self.values.size)]

    def _tail_squares(self, start):
        return float(np.sum(self.values[start:] ** 2))

    def decay_exponent(self):
        return math.inf

    def to_dict(self):
        return dict(kind=self.kind, values=self.values.tolist(), alpha_max=self.alpha_max)


def observer_schedule(alpha_max: float = math.inf) -> PiecewiseStep:
    """``1e-4`` up to ``k = 20``, halved at 40 and 60, then ``(61/k) 1.25e-5``."""
    return PiecewiseStep([20, 40, 60], [1e-4, 0.5e-4, 0.25e-4], tail_scale=1.25e-5, tail_ref=61,
                         tail_power=1.0, alpha_max=alpha_max)


def policy_from_spec(spec: dict) -> StepSizePolicy:
    """Build a policy from a plain mapping with a ``kind`` key."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    builders = {
        "constant": ConstantStep,
        "power-law": PowerLawStep,
        "piecewise": PiecewiseStep,
        "halving": HalvingStep,
        "explicit": ExplicitStep,
        "observer": observer_schedule,
    }
    if kind not in builders:
        raise ValueError(f"unknown step policy kind {kind!r}; expected one of {sorted(builders)}")
    try:
        return builders[kind](**spec)
    except TypeError as exc:
        raise ValueError(f"bad parameters for step policy {kind!r}: {exc}") from exc


# --------------------------------------------------------------------------
# stability budget


@dataclass(frozen=True)
class StabilityBudget:
    R_star: float
    budget: float
    cap: float


def stability_budget(K: float, L: float, sigma: float, delta: float, epsilon: float) -> StabilityBudget:
    """``R* = K^2 sigma^2 + 2 L (K^2 + sigma^2)``, budget ``delta eps / R*`` and cap ``1/L``.

    ``K`` and ``sigma`` may be zero (exact gradient, flat cost); ``R* = 0``
    then gives an infinite budget.
    """
    for name, v in dict(K=K, sigma=sigma).items():
        if not (math.isfinite(v) and v >= 0):
            raise ValueError(f"{name} must be finite and >= 0, got {v!r}")
    for name, v in dict(L=L, delta=delta, epsilon=epsilon).items():
        if not (math.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be finite and > 0, got {v!r}")
    R = K * K * sigma * sigma + 2.0 * L * (K * K + sigma * sigma)
    budget = math.inf if R == 0 else delta * epsilon / R
    return StabilityBudget(R, budget, 1.0 / L)


@dataclass
class PolicyReport:
    sum_squares: float
    within_budget: bool
    within_cap: bool
    decay_exponent: float | None
    theta_power: bool
    l2_summable: bool

    def __str__(self):
        return (f"sum alpha^2 = {self.sum_squares:.6g}; budget ok: {self.within_budget}; cap ok: {self.within_cap}; "
                f"Theta(1/k^p) with p in (1/2, 1]: {self.theta_power}")


def validate_policy(policy: StepSizePolicy, budget: float = math.inf, horizon: int | None = None,
                    cap: float | None = None) -> PolicyReport:
    """Check a policy against a squared-sum budget and a per-step cap."""
    total = policy.sum_squares(horizon)
    p = policy.decay_exponent()
    if cap is None:
        within_cap = True
    elif horizon is not None:
        within_cap = bool(np.all(policy.steps(horizon) <= cap))
    else:
        # raw steps are non-increasing beyond the head for every built-in policy
        within_cap = bool(np.all(policy.steps(_HEAD) <= cap))
    return PolicyReport(
        sum_squares=total,
        within_budget=bool(total <= budget),
        within_cap=within_cap,
        decay_exponent=p,
        theta_power=p is not None and 0.5 < p <= 1.0,
        l2_summable=math.isfinite(policy.sum_squares(None)),
    )


# --------------------------------------------------------------------------
# local constants


@dataclass
class LocalConstants:
    K: float
    L: float
    sigma: float
    points: np.ndarray = field(repr=False)
    heuristic: bool = True


def probe_points(lower, upper, count: int = 0, seed=0) -> np.ndarray:
    """Box vertices (up to 10 dimensions) plus `count` uniform interior points."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper)) and np.all(lower <= upper)):
        raise ValueError("probe box must be finite with lower <= upper")
    n = lower.size
    pts = []
    if n <= 10:
        for bits in range(2**n):
            mask = np.array([(bits >> i) & 1 for i in range(n)], dtype=bool)
            pts.append(np.where(mask, upper, lower))
    rng = np.random.default_rng(seed)
    pts.extend(lower + (upper - lower) * rng.random((count, n)))
    return np.unique(np.array(pts), axis=0)


def estimate_local_constants(ps: ParametrizedSystem, points, dist: SamplingDistribution | None = None,
                             M: int = 1, repetitions: int = 200, seed=0, gradient=None) -> LocalConstants:
    """Heuristic ``(K, L, sigma)`` from gradients at probe points.

    ``K`` is the largest gradient norm, ``L`` the largest difference quotient
    over all pairs, and ``sigma^2`` the largest mean squared deviation of the
    `M`-sample estimator from the exact gradient. All three are lower bounds
    on the true constants over the probed region. `gradient` defaults to the
    Gramian oracle.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 2:
        raise ValueError("need at least two distinct probe points")
    if gradient is None:
        from .oracle import exact_gradient

        def gradient(mu):
            return exact_gradient(ps, mu)

    grads = np.array([gradient(p) for p in pts], dtype=float)
    K = float(np.max(np.linalg.norm(grads, axis=1)))
    L = 0.0
    for i in range(len(pts)):
        d_mu = np.linalg.norm(pts[i + 1:] - pts[i], axis=1)
        d_g = np.linalg.norm(grads[i + 1:] - grads[i], axis=1)
        ok = d_mu > 0
        if np.any(ok):
            L = max(L, float(np.max(d_g[ok] / d_mu[ok])))
    sigma2 = 0.0
    if dist is not None:
        seeds = np.random.SeedSequence(seed).spawn(len(pts))
        for p, g, s in zip(pts, grads, seeds):
            children = s.spawn(repetitions)
            est = np.array([estimate_gradient(ps, p, dist, M, c).estimate for c in children])
            sigma2 = max(sigma2, float(np.mean(np.sum((est - g) ** 2, axis=1))))
    return LocalConstants(K, L, math.sqrt(sigma2), pts)


# --------------------------------------------------------------------------
# the descent loop


def iteration_seed(seed: int, trial: int, k: int) -> np.random.SeedSequence:
    """Independent stream for iteration `k` of trial `trial`."""
    return np.random.SeedSequence(entropy=seed, spawn_key=(trial, k))


@dataclass
class RunRecord:
    """Trajectory of one descent run.

    ``mus[k+1] = project(mus[k] - alphas[k] * estimates[k])``; ``projected[k]``
    flags steps where the projection changed the point.
    """

    mus: np.ndarray
    alphas: np.ndarray
    estimates: np.ndarray
    standard_errors: np.ndarray
    projected: np.ndarray
    wall_times: np.ndarray
    checkpoints: dict
    seed: int
    trial: int
    M: int
    N: int
    termination: str = "completed"
    message: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return self.alphas.size

    @property
    def final(self) -> np.ndarray:
        return self.mus[-1]

    def replay(self, project=None) -> np.ndarray:
        """Recompute the iterates from ``mus[0]``, the step sizes and the stored estimates."""
        out = [self.mus[0]]
        for a, g in zip(self.alphas, self.estimates):
            nxt = out[-1] - a * g
            out.append(project(nxt) if project is not None else nxt)
        return np.array(out)

    def to_csv(self, path) -> None:
        n = self.mus.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            params = [f"mu_{j}" for j in range(n)]
            w.writerow(["k", "alpha"] + params + ["estimate_norm", "checkpoint_cost", "projected"])
            for k, mu in enumerate(self.mus):
                step = k < self.iterations
                row = [k, repr(float(self.alphas[k])) if step else ""]
                row += [repr(float(x)) for x in mu]
                row.append(repr(float(np.linalg.norm(self.estimates[k]))) if step else "")
                row.append(repr(float(self.checkpoints[k])) if k in self.checkpoints else "")
                row.append(int(self.projected[k]) if step else "")
                w.writerow(row)

    def sidecar(self) -> dict:
        return dict(seed=self.seed, trial=self.trial, M=self.M, N=self.N, iterations=self.iterations,
                    termination=self.termination, message=self.message,
                    checkpoints={str(k): v for k, v in self.checkpoints.items()},
                    projection_active=int(np.sum(self.projected)), **self.metadata)

    def write(self, stem) -> None:
        """``<stem>.csv`` trajectory and ``<stem>.json`` metadata."""
        self.to_csv(f"{stem}.csv")
        with open(f"{stem}.json", "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, default=_json_default)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x)}")


def sgd_run(ps: ParametrizedSystem, mu0, policy: StepSizePolicy, dist: SamplingDistribution, M: int, N: int,
            seed: int = 0, *, trial: int = 0, cost=None, checkpoint_every: int | None = None,
            divergence_bound: float | None = None, project: bool = True, gradient=None,
            workers: int | None = None) -> RunRecord:
    """Run `N` descent steps from `mu0`, producing ``mu_0, ..., mu_N``.

    Each step draws `M` frequencies from an independent stream derived from
    ``(seed, trial, k)``. `gradient`, if given, replaces the estimator by an
    exact gradient. `cost` is evaluated every `checkpoint_every` iterations
    (and at both ends); a checkpoint above `divergence_bound` stops the run.
    An evaluation failure also stops the run, keeping the partial record.
    """
    if N < 0:
        raise ValueError("N must be >= 0")
    mu = ps.check_domain(mu0).copy()
    box = ps.domain
    n = mu.size
    mus, alphas, ests, ses, proj, times = [mu.copy()], [], [], [], [], []
    checkpoints = {}
    termination, message = "completed", ""

    def checkpoint(k, x):
        if cost is None:
            return False
        c = float(cost(x))
        checkpoints[k] = c
        return divergence_bound is not None and not c <= divergence_bound

    every = checkpoint_every or 0
    if checkpoint(0, mu):
        termination, message = "diverged", "initial cost above the divergence bound"
        N = 0
    for k in range(N):
        t0 = time.perf_counter()
        try:
            if gradient is not None:
                g = np.asarray(gradient(mu), dtype=float)
                se = np.zeros(n)
            else:
                est = estimate_gradient(ps, mu, dist, M, iteration_seed(seed, trial, k), workers=workers)
                g, se = est.estimate, est.standard_error
        except (EstimateAborted, ParameterDomainError, ArithmeticError, np.linalg.LinAlgError) as exc:
            termination, message = "evaluation-failed", str(exc)
            break
        a = policy(k)
        nxt = mu - a * g
        flag = False
        if project and box.is_proper:
            clipped = box.project(nxt)
            flag = bool(np.any(clipped != nxt))
            nxt = clipped
        mu = nxt
        mus.append(mu.copy())
        alphas.append(a)
        ests.append(g)
        ses.append(se)
        proj.append(flag)
        times.append(time.perf_counter() - t0)
        last = k + 1 == N
        if every and ((k + 1) % every == 0 or last) or (last and cost is not None):
            if checkpoint(k + 1, mu):
                termination = "diverged"
                message = f"checkpoint cost {checkpoints[k + 1]!r} at k={k + 1} exceeds {divergence_bound!r}"
                break
    return RunRecord(
        mus=np.array(mus), alphas=np.array(alphas), estimates=np.array(ests).reshape(-1, n),
        standard_errors=np.array(ses).reshape(-1, n), projected=np.array(proj, dtype=bool),
        wall_times=np.array(times), checkpoints=checkpoints, seed=seed, trial=trial, M=M, N=N,
        termination=termination, message=message,
    )


def run_trials(ps, mu0, policy, dist, M, N, seed=0, trials=1, threads: int = 1, **kw) -> list[RunRecord]:
    """Independent trials ``0..trials-1``; results do not depend on `threads`."""
    def one(t):
        return sgd_run(ps, mu0, policy, dist, M, N, seed, trial=t, **kw)

    if threads <= 1 or trials == 1:
        return [one(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(trials)))
