"""Benchmark problems and a registry keyed by the ``problem`` config entry."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..systems import ParametrizedSystem


@dataclass
class Benchmark:
    """A family together with its default start point and checkpoint cost."""

    name: str
    family: ParametrizedSystem
    mu0: np.ndarray
    cost: Callable[[np.ndarray], float]
    info: dict = field(default_factory=dict)


def _scalar(kind):
    def build(mu0=None):
        from ..oracle import exact_cost
        from .scalar import gain_family, pole_family

        fam = gain_family() if kind == "scalar-gain" else pole_family()
        default = [2.0] if kind == "scalar-gain" else [1.0]
        mu = np.asarray(default if mu0 is None else mu0, dtype=float)
        return Benchmark(kind, fam, mu, lambda m: exact_cost(fam, m))
    return build


def _random_affine(n=8, n_params=3, seed=0, perturbation=0.2, mu0=None):
    from ..oracle import exact_cost
    from .scalar import random_affine_family

    fam, nominal = random_affine_family(n=n, n_params=n_params, seed=seed, perturbation=perturbation)
    mu = nominal if mu0 is None else np.asarray(mu0, dtype=float)
    return Benchmark("random-affine", fam, mu, lambda m: exact_cost(fam, m), dict(n=n, seed=seed))


def _wave(damping=None, filter_time=None, model="viscous", fd_order=400, mu0=None):
    from .wave import DAMPING, FILTER_TIME, WaveEquationProblem

    prob = WaveEquationProblem(DAMPING if damping is None else damping,
                               FILTER_TIME if filter_time is None else filter_time, model)
    mu = prob.mu0 if mu0 is None else np.asarray(mu0, dtype=float)

    def cost(m):
        return 0.5 * prob.fd_norm(m, fd_order) ** 2

    return Benchmark("wave", prob.family, mu, cost, dict(problem=prob, fd_order=fd_order))


def _observer(r=2, n=2000, matrices=None, mu0=None, **plant_kw):
    from .observer import initialize_observer, load_observer_problem, synthetic_observer_problem

    if matrices is not None:
        prob = load_observer_problem(r=r, **matrices)
    else:
        prob = synthetic_observer_problem(n=n, r=r, **plant_kw)
    mu = initialize_observer(prob, mu0)
    return Benchmark("observer", prob.family, mu, prob.cost, dict(problem=prob))


PROBLEMS = {
    "scalar-gain": _scalar("scalar-gain"),
    "scalar-pole": _scalar("scalar-pole"),
    "random-affine": _random_affine,
    "wave": _wave,
    "observer": _observer,
}


def make_problem(kind: str, **options) -> Benchmark:
    if kind not in PROBLEMS:
        raise ValueError(f"unknown problem {kind!r}; expected one of {sorted(PROBLEMS)}")
    try:
        return PROBLEMS[kind](**options)
    except TypeError as exc:
        raise ValueError(f"bad options for problem {kind!r}: {exc}") from exc
