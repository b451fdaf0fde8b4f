"""Small parametrized families with known H2 quantities."""

from __future__ import annotations

import numpy as np

from ..systems import ParameterBox, ParametricStateSpace


def gain_family() -> ParametricStateSpace:
    """``G(mu; s) = mu / (s + 1)``: ``c(mu) = mu^2 / 4`` and ``grad c = mu / 2``."""
    return ParametricStateSpace(
        lambda mu: (np.array([[-1.0]]), np.array([[mu[0]]]), np.array([[1.0]])),
        lambda mu: [(np.zeros((1, 1)), np.ones((1, 1)), np.zeros((1, 1)))],
        n_params=1,
    )


def pole_family() -> ParametricStateSpace:
    """``G(mu; s) = 2 mu / (s + mu)``: ``c(mu) = mu`` for ``mu > 0``, infinite below zero."""
    return ParametricStateSpace(
        lambda mu: (np.array([[-mu[0]]]), np.array([[2.0 * mu[0]]]), np.array([[1.0]])),
        lambda mu: [(-np.ones((1, 1)), 2.0 * np.ones((1, 1)), np.zeros((1, 1)))],
        n_params=1,
    )


def summed_gain_family() -> ParametricStateSpace:
    """``G(mu; s) = (mu_1 + mu_2) / (s + 1)``; both gradient components coincide."""
    return ParametricStateSpace(
        lambda mu: (np.array([[-1.0]]), np.array([[mu[0] + mu[1]]]), np.array([[1.0]])),
        lambda mu: [(np.zeros((1, 1)), np.ones((1, 1)), np.zeros((1, 1)))] * 2,
        n_params=2,
    )


def constant_family(n_params: int = 1, value: float = 1.0) -> ParametricStateSpace:
    """``G = value / (s + 1)`` regardless of ``mu`` (zero gradient everywhere)."""
    return ParametricStateSpace(
        lambda mu: (np.array([[-1.0]]), np.array([[value]]), np.array([[1.0]])),
        lambda mu: [(np.zeros((1, 1)),) * 3] * n_params,
        n_params=n_params,
    )


def random_stable_matrix(n: int, rng, margin: float = 0.5, spread: float = 5.0) -> np.ndarray:
    """Random real matrix with spectral abscissa at most ``-margin``."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    poles = -margin - spread * rng.random(n)
    S = rng.standard_normal((n, n))
    S = 0.5 * (S - S.T)
    # stable symmetric part plus a skew part keeps the abscissa below -margin
    return Q @ np.diag(poles) @ Q.T + S


def random_affine_family(n: int = 8, n_params: int = 3, n_inputs: int = 1, n_outputs: int = 1,
                         seed=0, perturbation: float = 0.2) -> tuple[ParametricStateSpace, np.ndarray]:
    """Random family ``(A0 + sum mu_j A_j, B0 + sum mu_j B_j, C0 + sum mu_j C_j)``.

    Returns the family and a nominal parameter (zero) at which ``G`` is
    stable with margin.
    """
    rng = np.random.default_rng(seed)
    A0 = random_stable_matrix(n, rng)
    B0 = rng.standard_normal((n, n_inputs))
    C0 = rng.standard_normal((n_outputs, n))
    dA = [perturbation * rng.standard_normal((n, n)) for _ in range(n_params)]
    dB = [rng.standard_normal((n, n_inputs)) for _ in range(n_params)]
    dC = [rng.standard_normal((n_outputs, n)) for _ in range(n_params)]

    def matrices(mu):
        A = A0 + sum(m * d for m, d in zip(mu, dA))
        B = B0 + sum(m * d for m, d in zip(mu, dB))
        C = C0 + sum(m * d for m, d in zip(mu, dC))
        return A, B, C

    def derivatives(mu):
        return list(zip(dA, dB, dC))

    fam = ParametricStateSpace(matrices, derivatives, n_params=n_params,
                               domain=ParameterBox.unbounded(n_params))
    return fam, np.zeros(n_params)
