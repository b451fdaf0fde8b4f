"""LTI systems evaluable on the imaginary axis.

Every system exposes ``freqresp(omegas)`` returning an array of shape
``(len(omegas), n_outputs, n_inputs)`` holding ``G(i omega)``. Parametrized
families additionally return the parameter-gradient responses.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.io
import scipy.linalg as spla
import scipy.sparse as sp
import scipy.sparse.linalg as spla_sparse


class SingularShiftError(ArithmeticError):
    """``i omega E - A`` is singular at the requested frequency."""

    def __init__(self, omega, msg=None):
        self.omega = float(omega)
        super().__init__(msg or f"pencil is singular at omega={self.omega!r}")


class IllPosedInterconnectionError(ArithmeticError):
    """The loop ``I - plant * controller`` is singular at a frequency."""

    def __init__(self, omega, msg=None):
        self.omega = float(omega)
        super().__init__(msg or f"ill-posed interconnection at omega={self.omega!r}")


class ParameterDomainError(ValueError):
    pass


def _as_omegas(omegas):
    w = np.asarray(omegas, dtype=float)
    return np.atleast_1d(w)


class FrequencySystem:
    """Base class; subclasses implement :meth:`freqresp`."""

    shape: tuple[int, int]

    def freqresp(self, omegas) -> np.ndarray:
        raise NotImplementedError

    @property
    def n_outputs(self) -> int:
        return self.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.shape[1]


def evaluate(system: FrequencySystem, omega: float) -> np.ndarray:
    """Transfer matrix of `system` at ``s = i*omega`` as an ``(ny, nu)`` array."""
    return system.freqresp(np.array([float(omega)]))[0]


class DescriptorStateSpace(FrequencySystem):
    """``E x' = A x + B u``, ``y = C x`` with dense or sparse ``E`` and ``A``.

    ``E=None`` means the identity. The response at ``omega`` is
    ``C (i omega E - A)^{-1} B``; sparse pencils are factorized with a sparse
    LU once per frequency.
    """

    def __init__(self, A, B, C, E=None):
        self.storage = "sparse" if sp.issparse(A) or sp.issparse(E) else "dense"
        if self.storage == "sparse":
            A = sp.csc_matrix(A, dtype=float)
            E = sp.identity(A.shape[0], format="csc") if E is None else sp.csc_matrix(E, dtype=float)
        else:
            A = np.atleast_2d(np.asarray(A, dtype=float))
            E = None if E is None else np.atleast_2d(np.asarray(E, dtype=float))
        B = _dense2d(B)
        C = _dense2d(C)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if E is not None and E.shape != (n, n):
            raise ValueError(f"E has shape {E.shape}, expected {(n, n)}")
        if B.shape[0] != n:
            raise ValueError(f"B has {B.shape[0]} rows, expected {n}")
        if C.shape[1] != n:
            raise ValueError(f"C has {C.shape[1]} columns, expected {n}")
        self.A, self.B, self.C, self.E = A, B, C, E
        self.shape = (C.shape[0], B.shape[1])

    @property
    def order(self) -> int:
        return self.A.shape[0]

    def _E(self):
        if self.E is not None:
            return self.E
        return np.eye(self.order)

    def solve(self, omega: float, rhs: np.ndarray, adjoint: bool = False) -> np.ndarray:
        """Solve ``(i omega E - A) X = rhs`` (or the conjugate-transposed system)."""
        if self.storage == "sparse":
            pencil = (1j * omega) * self.E - self.A
            try:
                with np.errstate(all="raise"):
                    lu = spla_sparse.splu(pencil.tocsc().astype(complex))
                    x = lu.solve(np.asarray(rhs, dtype=complex), trans="H" if adjoint else "N")
            except (RuntimeError, FloatingPointError) as exc:
                raise SingularShiftError(omega) from exc
            if not np.all(np.isfinite(x)):
                raise SingularShiftError(omega)
            return x
        pencil = (1j * omega) * self._E() - self.A
        if adjoint:
            pencil = pencil.conj().T
        try:
            # singularity is detected from the pivots below
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", spla.LinAlgWarning)
                lu, piv = spla.lu_factor(pencil, check_finite=False)
        except (spla.LinAlgError, ValueError) as exc:
            raise SingularShiftError(omega) from exc
        diag = np.abs(np.diag(lu))
        if diag.min() <= np.finfo(float).eps * max(diag.max(), 1.0) * self.order:
            raise SingularShiftError(omega)
        return spla.lu_solve((lu, piv), rhs, check_finite=False)

    def solve_batch(self, omegas, rhs: np.ndarray, adjoint: bool = False) -> np.ndarray:
        """Solve the shifted system at every frequency; returns ``(M, n, k)``."""
        w = _as_omegas(omegas)
        n = self.order
        if self.storage == "dense" and n <= BATCH_ORDER_LIMIT:
            pencils = (1j * w)[:, None, None] * self._E()[None] - self.A[None]
            if adjoint:
                pencils = np.conj(np.swapaxes(pencils, 1, 2))
            try:
                x = np.linalg.solve(pencils, np.broadcast_to(rhs, (w.size,) + rhs.shape))
            except np.linalg.LinAlgError:
                x = None
            if x is not None and np.all(np.isfinite(x)):
                # residual check catches numerically singular shifts
                res = np.abs(pencils @ x - rhs).max(axis=(1, 2))
                scale = np.abs(pencils).max(axis=(1, 2)) * np.abs(x).max(axis=(1, 2)) + np.abs(rhs).max()
                if np.all(res <= 1e-8 * scale) and np.all(_batch_rcond(pencils) > 1e3 * np.finfo(float).eps):
                    return x
            # locate the offending frequency with the scalar path
            return np.stack([self.solve(om, rhs, adjoint) for om in w])
        return np.stack([self.solve(om, rhs, adjoint) for om in w])

    def freqresp(self, omegas) -> np.ndarray:
        w = _as_omegas(omegas)
        return self.C[None] @ self.solve_batch(w, self.B.astype(complex))

    def to_dense(self) -> "DescriptorStateSpace":
        if self.storage == "dense":
            return self
        return DescriptorStateSpace(self.A.toarray(), self.B, self.C, self.E.toarray())


BATCH_ORDER_LIMIT = 64


def _batch_rcond(pencils):
    sv = np.linalg.svd(pencils, compute_uv=False)
    return sv[:, -1] / sv[:, 0]


def _dense2d(M) -> np.ndarray:
    if sp.issparse(M):
        M = M.toarray()
    return np.atleast_2d(np.asarray(M, dtype=float))


class AnalyticSystem(FrequencySystem):
    """Closed-form transfer function.

    `func` maps a 1-D array of frequencies to an array of shape
    ``(len, ny, nu)`` (or ``(len,)`` for SISO).
    """

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], shape=(1, 1)):
        self.func = func
        self.shape = tuple(shape)

    def freqresp(self, omegas) -> np.ndarray:
        w = _as_omegas(omegas)
        val = np.asarray(self.func(w), dtype=complex)
        return val.reshape((w.size,) + self.shape)


class ConstantSystem(AnalyticSystem):
    def __init__(self, value):
        value = np.atleast_2d(np.asarray(value, dtype=complex))
        self.value = value
        super().__init__(lambda w: np.broadcast_to(value, (w.size,) + value.shape), value.shape)


# --------------------------------------------------------------------------
# parameter domains and parametrized families


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned box ``lower <= mu <= upper``; infinite bounds allowed."""

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def unbounded(cls, n: int) -> "ParameterBox":
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("invalid parameter box")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def is_proper(self) -> bool:
        return bool(np.any(np.isfinite(self.lower)) or np.any(np.isfinite(self.upper)))

    def contains(self, mu) -> bool:
        mu = np.asarray(mu, dtype=float)
        return bool(np.all(mu >= self.lower) and np.all(mu <= self.upper))

    def project(self, mu) -> np.ndarray:
        return np.clip(np.asarray(mu, dtype=float), self.lower, self.upper)


class ParametrizedSystem:
    """A family ``G(mu)`` together with its gradient systems ``dG/dmu_j``.

    Subclasses override :meth:`freqresp_with_gradient`, which returns
    ``(G, dG)`` with ``G.shape == (M, ny, nu)`` and
    ``dG.shape == (n_params, M, ny, nu)``.
    """

    n_params: int
    shape: tuple[int, int]
    domain: ParameterBox

    def check_domain(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float).ravel()
        if mu.size != self.n_params:
            raise ParameterDomainError(f"expected {self.n_params} parameters, got {mu.size}")
        if not self.domain.contains(mu):
            raise ParameterDomainError(f"mu={mu} outside the parameter domain")
        return mu

    def freqresp_with_gradient(self, mu, omegas) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def system(self, mu) -> FrequencySystem:
        mu = self.check_domain(mu)
        return AnalyticSystem(lambda w: self.freqresp_with_gradient(mu, w)[0], self.shape)

    def gradient_system(self, mu, j: int) -> FrequencySystem:
        mu = self.check_domain(mu)
        return AnalyticSystem(lambda w: self.freqresp_with_gradient(mu, w)[1][j], self.shape)

    def realization(self, mu):
        """Dense state-space realizations ``(G, [dG_1, ...])`` if available."""
        raise NotImplementedError(f"{type(self).__name__} has no state-space realization")


class CallableParametrizedSystem(ParametrizedSystem):
    """Parametrized family defined by a builder and per-parameter gradient builders."""

    def __init__(self, builder, gradient_builders, n_params=None, domain=None, shape=None):
        self.builder = builder
        self.gradient_builders = list(gradient_builders)
        self.n_params = n_params if n_params is not None else len(self.gradient_builders)
        self.domain = domain or ParameterBox.unbounded(self.n_params)
        if shape is None:
            shape = builder(np.zeros(self.n_params) if self.domain.contains(np.zeros(self.n_params))
                            else self.domain.project(np.zeros(self.n_params))).shape
        self.shape = tuple(shape)

    def freqresp_with_gradient(self, mu, omegas):
        mu = self.check_domain(mu)
        w = _as_omegas(omegas)
        G = self.builder(mu).freqresp(w)
        dG = np.stack([gb(mu).freqresp(w) for gb in self.gradient_builders]) if self.n_params else \
            np.zeros((0,) + G.shape, dtype=complex)
        return G, dG


class ParametricStateSpace(ParametrizedSystem):
    """State-space family ``(A(mu), B(mu), C(mu))`` with fixed ``E``.

    `matrices(mu)` returns ``(A, B, C)``; `derivatives(mu)` returns a list of
    ``(dA, dB, dC)`` per parameter. The gradient response is
    ``dC R B + C R dA R B + C R dB`` with ``R = (i omega E - A)^{-1}``.
    """

    def __init__(self, matrices, derivatives, n_params, E=None, domain=None):
        self.matrices = matrices
        self.derivatives = derivatives
        self.n_params = int(n_params)
        self.E = E
        self.domain = domain or ParameterBox.unbounded(self.n_params)
        A, B, C = matrices(self.domain.project(np.zeros(self.n_params)))
        self.shape = (np.atleast_2d(C).shape[0], np.atleast_2d(B).shape[1])

    def state_space(self, mu) -> DescriptorStateSpace:
        A, B, C = self.matrices(np.asarray(mu, dtype=float))
        return DescriptorStateSpace(A, B, C, self.E)

    def freqresp_with_gradient(self, mu, omegas):
        mu = self.check_domain(mu)
        w = _as_omegas(omegas)
        ss = self.state_space(mu)
        derivs = [tuple(_dense2d(m) if not sp.issparse(m) else m for m in d) for d in self.derivatives(mu)]
        RB = ss.solve_batch(w, ss.B.astype(complex))
        CR = np.conj(np.swapaxes(ss.solve_batch(w, ss.C.T.astype(complex), adjoint=True), 1, 2))
        G = ss.C[None] @ RB
        dG = np.empty((self.n_params, w.size) + self.shape, dtype=complex)
        for j, (dA, dB, dC) in enumerate(derivs):
            dG[j] = dC[None] @ RB + CR @ (dA @ RB) + CR @ dB[None]
        return G, dG

    def realization(self, mu):
        """Realizations of ``G(mu)`` and of each ``dG/dmu_j`` (doubled state)."""
        mu = np.asarray(mu, dtype=float)
        ss = self.state_space(mu).to_dense()
        A, B, C = ss.A, ss.B, ss.C
        if ss.E is not None:
            A = np.linalg.solve(ss.E, A)
            B = np.linalg.solve(ss.E, B)
        grads = []
        for dA, dB, dC in self.derivatives(mu):
            dA, dB, dC = (_dense2d(x) for x in (dA, dB, dC))
            if ss.E is not None:
                dA = np.linalg.solve(ss.E, dA)
                dB = np.linalg.solve(ss.E, dB)
            grads.append(derivative_realization(A, B, C, dA, dB, dC))
        return DescriptorStateSpace(A, B, C), grads


def derivative_realization(A, B, C, dA, dB, dC) -> DescriptorStateSpace:
    """Realization of ``dC R B + C R dA R B + C R dB`` on a doubled state."""
    n = A.shape[0]
    Aj = np.block([[A, dA], [np.zeros((n, n)), A]])
    Bj = np.vstack([dB, B])
    Cj = np.hstack([C, dC])
    return DescriptorStateSpace(Aj, Bj, Cj)


def parameter_gradient_fd_check(ps: ParametrizedSystem, mu, omega: float, h: float) -> float:
    """Largest deviation between central differences and the gradient systems at one frequency."""
    mu = ps.check_domain(mu)
    w = np.array([float(omega)])
    _, dG = ps.freqresp_with_gradient(mu, w)
    worst = 0.0
    for j in range(ps.n_params):
        e = np.zeros_like(mu)
        e[j] = h
        Gp, _ = ps.freqresp_with_gradient(mu + e, w)
        Gm, _ = ps.freqresp_with_gradient(mu - e, w)
        fd = (Gp[0] - Gm[0]) / (2 * h)
        worst = max(worst, float(np.max(np.abs(fd - dG[j, 0]))))
    return worst


# --------------------------------------------------------------------------
# interconnections

SISO_FEEDBACK = "siso-feedback"
OBSERVER_ERROR = "observer-error"
TOPOLOGIES = (SISO_FEEDBACK, OBSERVER_ERROR)


def _check_loop(den, w):
    bad = np.abs(den) < 1e-14
    if np.any(bad):
        raise IllPosedInterconnectionError(w[np.argmax(bad)])


def siso_feedback_values(P, K, w):
    """Closed loop ``d -> (y, u)`` with ``y = P (d + u)``, ``u = K y``.

    `P` and `K` are arrays of shape ``(M,)``; returns shape ``(M, 2, 1)``.
    """
    den = 1.0 - P * K
    _check_loop(den, w)
    S = P / den
    return np.stack([S, K * S], axis=-1)[..., None]


def observer_error_values(Z, Y, Qu, Qy):
    """Error map ``(w, u, v) -> e = z - zhat`` for a plant driven by ``u + w``.

    `Z`, `Y` are plant responses to the actuator input (``z`` and ``y``
    channels); `Qu`, `Qy` are the observer responses from ``u`` and from the
    noisy measurement. Returns shape ``(M, 1, 3)``.
    """
    e_w = Z - Qy * Y
    e_u = Z - Qu - Qy * Y
    e_v = -Qy
    return np.stack([e_w, e_u, e_v], axis=-1)[:, None, :]


class Interconnection(FrequencySystem):
    """Closed loop of two systems composed frequency-pointwise."""

    def __init__(self, plant: FrequencySystem, controller: FrequencySystem, topology: str):
        if topology == SISO_FEEDBACK:
            if plant.shape != (1, 1) or controller.shape != (1, 1):
                raise ValueError("siso-feedback needs SISO plant and controller")
            self.shape = (2, 1)
        elif topology == OBSERVER_ERROR:
            # plant: u -> (z, y); observer: (u, y_meas) -> zhat
            if plant.shape != (2, 1) or controller.shape != (1, 2):
                raise ValueError("observer-error needs a (2, 1) plant and a (1, 2) observer")
            self.shape = (1, 3)
        else:
            raise ValueError(f"unknown topology {topology!r}; expected one of {TOPOLOGIES}")
        self.plant, self.controller, self.topology = plant, controller, topology

    def freqresp(self, omegas):
        w = _as_omegas(omegas)
        P = self.plant.freqresp(w)
        K = self.controller.freqresp(w)
        if self.topology == SISO_FEEDBACK:
            return siso_feedback_values(P[:, 0, 0], K[:, 0, 0], w)
        return observer_error_values(P[:, 0, 0], P[:, 1, 0], K[:, 0, 0], K[:, 0, 1])


def feedback_interconnect(plant: FrequencySystem, controller: FrequencySystem, topology: str) -> Interconnection:
    """Wire `plant` and `controller` in one of the supported topologies.

    ``"siso-feedback"`` gives ``d -> (y, u)`` with ``y = P (d + u)`` and
    ``u = K y``. ``"observer-error"`` gives ``(w, u, v) -> z - zhat``.
    """
    return Interconnection(plant, controller, topology)


class SISOFeedbackFamily(ParametrizedSystem):
    """``d -> (y, u)`` around a fixed plant and a parametrized SISO controller."""

    def __init__(self, plant: FrequencySystem, controller: ParametrizedSystem):
        if plant.shape != (1, 1) or controller.shape != (1, 1):
            raise ValueError("SISO plant and controller required")
        self.plant = plant
        self.controller = controller
        self.n_params = controller.n_params
        self.domain = controller.domain
        self.shape = (2, 1)

    def freqresp_with_gradient(self, mu, omegas):
        mu = self.check_domain(mu)
        w = _as_omegas(omegas)
        P = self.plant.freqresp(w)[:, 0, 0]
        K, dK = self.controller.freqresp_with_gradient(mu, w)
        K = K[:, 0, 0]
        den = 1.0 - P * K
        _check_loop(den, w)
        G = siso_feedback_values(P, K, w)
        # d/dK [P/(1-PK), KP/(1-PK)] = [P^2, P] / (1-PK)^2
        sens = np.stack([P * P, P], axis=-1) / (den * den)[:, None]
        dG = dK[:, :, 0, 0][..., None] * sens[None]
        return G, dG[..., None]


# --------------------------------------------------------------------------
# Matrix Market I/O


def load_matrix(path) -> sp.spmatrix | np.ndarray:
    """Read one Matrix Market file (coordinate -> sparse CSC, array -> dense)."""
    M = scipy.io.mmread(os.fspath(path))
    if sp.issparse(M):
        return sp.csc_matrix(M, dtype=float)
    return np.asarray(M, dtype=float)


def load_descriptor_system(A, B, C, E=None) -> DescriptorStateSpace:
    """Build a :class:`DescriptorStateSpace` from Matrix Market paths.

    Dimensions are validated by the constructor.
    """
    mats = {k: load_matrix(p) for k, p in dict(A=A, B=B, C=C).items()}
    Em = load_matrix(E) if E is not None else None
    return DescriptorStateSpace(mats["A"], mats["B"], mats["C"], Em)


def save_matrix(path, M) -> None:
    scipy.io.mmwrite(os.fspath(path), M)
