"""PD tuning for a damped string (1-D wave equation) with a tip force.

The plant ``Phi`` is the exact tip compliance ``tanh(phi) / phi`` of
``xi_tt + c xi_t - xi_xx = 0`` on ``[0, 1]``, clamped at ``x = 0``.
Substituting ``xi = Re(Xi(x) e^{i omega t})`` gives
``Xi'' = (i c omega - omega^2) Xi``, so ``phi = sqrt(i c omega - omega^2)``.
The alternative ``model="constant-damping"`` uses ``phi = sqrt(i c - omega^2)``
instead; it does not match the PDE or its finite-difference discretization
and is kept only for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla
from scipy.integrate import trapezoid

from ..oracle import h2_norm, siso_feedback_realization
from ..systems import AnalyticSystem, DescriptorStateSpace, ParameterBox, ParametrizedSystem, SISOFeedbackFamily

DAMPING = 0.25
FILTER_TIME = 1e-2
MODELS = ("viscous", "constant-damping")


def phi_arg(omega, c: float = DAMPING, model: str = "viscous"):
    """``phi(omega)``, principal square-root branch."""
    w = np.asarray(omega, dtype=float)
    if model == "viscous":
        z = 1j * c * w - w * w
    elif model == "constant-damping":
        z = 1j * c - w * w
    else:
        raise ValueError(f"unknown wave model {model!r}; expected one of {MODELS}")
    return np.sqrt(z + 0j)


def tanh_over(phi):
    """``tanh(phi) / phi`` with the removable singularity at zero filled in."""
    phi = np.asarray(phi, dtype=complex)
    small = np.abs(phi) < 1e-4
    safe = np.where(small, 1.0, phi)
    p2 = phi * phi
    series = 1.0 - p2 / 3.0 + 2.0 * p2 * p2 / 15.0
    return np.where(small, series, np.tanh(safe) / safe)


def phi_eval(omega, c: float = DAMPING, model: str = "viscous"):
    """Tip compliance ``Phi(omega) = tanh(phi) / phi``."""
    out = tanh_over(phi_arg(omega, c, model))
    return complex(out) if np.ndim(omega) == 0 else out


def wave_plant(c: float = DAMPING, model: str = "viscous") -> AnalyticSystem:
    return AnalyticSystem(lambda w: phi_eval(w, c, model), (1, 1))


class PDController(ParametrizedSystem):
    """``K(mu; s) = mu_1 + mu_2 T_F s / (T_F s + 1)`` restricted to ``mu <= 0``."""

    def __init__(self, filter_time: float = FILTER_TIME, domain: ParameterBox | None = None):
        self.filter_time = float(filter_time)
        self.n_params = 2
        self.shape = (1, 1)
        self.domain = domain or ParameterBox(np.full(2, -np.inf), np.zeros(2))

    def derivative_filter(self, omegas):
        s = 1j * np.asarray(omegas, dtype=float) * self.filter_time
        return s / (s + 1.0)

    def freqresp_with_gradient(self, mu, omegas):
        mu = self.check_domain(mu)
        w = np.atleast_1d(np.asarray(omegas, dtype=float))
        D = self.derivative_filter(w)
        K = mu[0] + mu[1] * D
        dK = np.stack([np.ones_like(D), D])
        return K[:, None, None], dK[:, :, None, None]

    def realization(self, mu):
        """``(Ak, Bk, Ck, Dk)`` with one filter state."""
        tf = self.filter_time
        return (np.array([[-1.0 / tf]]), np.array([[1.0 / tf]]),
                np.array([[-mu[1]]]), mu[0] + mu[1])


@dataclass
class WaveEquationProblem:
    damping: float = DAMPING
    filter_time: float = FILTER_TIME
    model: str = "viscous"
    plant: AnalyticSystem = field(init=False)
    controller: PDController = field(init=False)
    family: SISOFeedbackFamily = field(init=False)

    def __post_init__(self):
        self.plant = wave_plant(self.damping, self.model)
        self.controller = PDController(self.filter_time)
        self.family = SISOFeedbackFamily(self.plant, self.controller)

    @property
    def mu0(self) -> np.ndarray:
        return np.zeros(2)

    def fd_closed_loop(self, mu, n: int = 400) -> DescriptorStateSpace:
        """Closed loop on the finite-difference plant of order `n`."""
        plant = wave_fd_discretize(n, self.damping)
        return siso_feedback_realization(plant, *self.controller.realization(np.asarray(mu, dtype=float)))

    def fd_norm(self, mu, n: int = 400) -> float:
        return h2_norm(self.fd_closed_loop(mu, n))

    def normalized_fd_norm(self, mu, n: int = 400) -> float:
        """``||G~(mu)|| / ||G~(mu0)||`` on the finite-difference model."""
        return self.fd_norm(mu, n) / self.fd_norm(self.mu0, n)


def wave_fd_discretize(n: int = 400, c: float = DAMPING) -> DescriptorStateSpace:
    """Second-order finite differences of the damped string with ``n`` states.

    Grid nodes ``x_j = j h``, ``j = 1..n/2``, ``h = 2/n``; ``xi_0 = 0``
    (clamped). The free end carries half a cell, so its row reads
    ``(h/2)(xi'' + c xi') = -(xi_N - xi_{N-1}) / h + g``. States are
    displacements then velocities; input is the tip force ``g``, output the
    tip displacement.
    """
    if n < 4 or n % 2:
        raise ValueError("n must be even and >= 4")
    N = n // 2
    h = 1.0 / N
    L = (np.diag(np.full(N, -2.0)) + np.diag(np.ones(N - 1), 1) + np.diag(np.ones(N - 1), -1)) / h**2
    L[N - 1, N - 2] = 2.0 / h**2
    b = np.zeros((N, 1))
    b[-1, 0] = 2.0 / h
    A = np.block([[np.zeros((N, N)), np.eye(N)], [L, -c * np.eye(N)]])
    B = np.vstack([np.zeros((N, 1)), b])
    C = np.zeros((1, n))
    C[0, N - 1] = 1.0
    return DescriptorStateSpace(A, B, C)


def disturbance(t):
    """Input disturbance ``sin(2 pi t) + sin(0.2 pi t)``."""
    t = np.asarray(t, dtype=float)
    return np.sin(2 * np.pi * t) + np.sin(0.2 * np.pi * t)


def simulate_disturbance_response(problem: WaveEquationProblem, mu, n: int = 400,
                                  t_end: float = 10.0, dt: float = 1e-3):
    """Time response ``(t, y, u)`` of the FD closed loop to :func:`disturbance`.

    Exact zero-order-hold stepping of the closed loop with fixed step `dt`.
    """
    sys = problem.fd_closed_loop(mu, n)
    A, B, C = sys.A, sys.B, sys.C
    nx = A.shape[0]
    # [[A, B], [0, 0]] exponential yields the ZOH pair in one shot
    aug = np.zeros((nx + 1, nx + 1))
    aug[:nx, :nx] = A * dt
    aug[:nx, nx:] = B * dt
    F = spla.expm(aug)
    Ad, Bd = F[:nx, :nx], F[:nx, nx:]
    steps = int(round(t_end / dt))
    t = np.arange(steps + 1) * dt
    d = disturbance(t)
    x = np.zeros(nx)
    out = np.empty((steps + 1, C.shape[0]))
    for k in range(steps + 1):
        out[k] = C @ x
        x = Ad @ x + Bd[:, 0] * d[k]
    return t, out[:, 0], out[:, 1]


def reference_settings() -> dict:
    """Experiment settings of the PD tuning case study."""
    return dict(M=1000, support=(1e-2, 1e4), alpha0=1e-2, period=200, N=2000, trials=20)


def truncated_cost(problem: WaveEquationProblem, mu, support=(1e-2, 1e4), points: int = 400_001) -> float:
    """``||G(mu)||^2 / 2`` over ``±support`` by a dense log-grid trapezoid rule."""
    lw = np.linspace(math.log10(support[0]), math.log10(support[1]), points)
    w = 10.0**lw
    G, _ = problem.family.freqresp_with_gradient(mu, w)
    g2 = np.sum(np.abs(G) ** 2, axis=(1, 2)) * w * math.log(10.0)
    return float(trapezoid(g2, lw)) / (2 * math.pi)
