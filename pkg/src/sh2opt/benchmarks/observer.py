"""Fixed-order observer design for a large sparse thermal plant.

Plant ``E x' = A x + B (u + w)``, ``z = C_z x``, ``y = C_y x`` measured as
``y + v``. Observer ``q' = A_q q + B_q [u; y + v]``, ``zhat = C_q q`` with
``vec([A_q, B_q, C_q^T]) = mu`` (column-major). The optimized map is
``(w, u, v) -> e = z - zhat``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sp
import scipy.sparse.linalg as spla_sparse

from ..oracle import MAX_ORDER, h2_norm_quadrature, observer_error_realization, spectral_abscissa
from ..systems import (DescriptorStateSpace, ParameterBox, ParametrizedSystem, derivative_realization,
                       observer_error_values)


class ObserverDesignError(RuntimeError):
    pass


def n_observer_params(r: int, n_u: int = 1, n_y: int = 1, n_z: int = 1) -> int:
    """``r*r`` for ``A_q``, ``r*(n_u + n_y)`` for ``B_q``, ``r*n_z`` for ``C_q``."""
    return r * (r + n_u + n_y + n_z)


def unpack(mu, r: int):
    """``(A_q, B_q, C_q)`` from the column-major vectorization of ``[A_q, B_q, C_q^T]``."""
    Mq = np.asarray(mu, dtype=float).reshape((r, r + 3), order="F")
    return Mq[:, :r], Mq[:, r:r + 2], Mq[:, r + 2][None, :]


def pack(Aq, Bq, Cq) -> np.ndarray:
    return np.hstack([Aq, Bq, np.atleast_2d(Cq).T]).ravel(order="F")


def diffusion_plant(n: int = 2000, kappa: float = 0.1, loss: float = 0.0,
                    x_input: float = 0.1, x_measure: float = 0.3, x_target: float = 0.7,
                    sensor_gain: float = 30.0):
    """Finite-volume heat equation on ``[0, 1]`` with ambient (zero) ends.

    Returns sparse ``E = h I`` and ``A = (kappa/h) tridiag(1, -2, 1) - h loss I``,
    a point heat input, and point temperature outputs ``C_y`` and ``C_z``.
    `sensor_gain` scales ``C_y`` and so sets the signal-to-noise ratio of
    the measurement against unit-intensity noise. The defaults are sized so
    that the observer step schedule (steps of order ``1e-4``) makes steady
    progress without leaving the stability region.
    """
    if n < 3:
        raise ValueError("n must be >= 3")
    h = 1.0 / (n + 1)
    main = np.full(n, -2.0 * kappa / h - loss * h)
    off = np.full(n - 1, kappa / h)
    A = sp.diags([off, main, off], [-1, 0, 1], format="csc")
    E = sp.identity(n, format="csc") * h

    def node(x):
        return min(n - 1, max(0, int(round(x / h)) - 1))

    B = np.zeros((n, 1))
    B[node(x_input), 0] = 1.0
    Cy = np.zeros((1, n))
    Cy[0, node(x_measure)] = sensor_gain
    Cz = np.zeros((1, n))
    Cz[0, node(x_target)] = 1.0
    return E, A, B, Cz, Cy


class ObserverFamily(ParametrizedSystem):
    """Observer error map ``G(mu)``, evaluated frequency-pointwise.

    One plant solve per frequency is shared by ``G`` and every gradient
    component; the observer part is an ``r x r`` resolvent.
    """

    def __init__(self, plant: DescriptorStateSpace, Cz, Cy, r: int):
        if r < 1:
            raise ValueError("observer order must be >= 1")
        self.plant = plant
        self.Cz = np.atleast_2d(np.asarray(Cz, dtype=float))
        self.Cy = np.atleast_2d(np.asarray(Cy, dtype=float))
        self.r = r
        self.n_params = n_observer_params(r)
        self.domain = ParameterBox.unbounded(self.n_params)
        self.shape = (1, 3)
        self._CzCy = np.vstack([self.Cz, self.Cy])

    def plant_response(self, omegas):
        X = self.plant.solve_batch(omegas, self.plant.B.astype(complex)) \
            if self.plant.storage == "dense" else \
            np.stack([self.plant.solve(w, self.plant.B) for w in omegas])
        ZY = self._CzCy[None] @ X
        return ZY[:, 0, 0], ZY[:, 1, 0]

    def freqresp_with_gradient(self, mu, omegas):
        mu = self.check_domain(mu)
        w = np.atleast_1d(np.asarray(omegas, dtype=float))
        r = self.r
        Aq, Bq, Cq = unpack(mu, r)
        Z, Y = self.plant_response(w)
        R = np.linalg.inv((1j * w)[:, None, None] * np.eye(r)[None] - Aq[None])
        CR = (Cq[None] @ R)[:, 0, :]          # (M, r)
        RB = R @ Bq[None]                     # (M, r, 2)
        Q = np.einsum("i,mik->mk", Cq[0], RB)  # (M, 2): [Q_u, Q_y]
        G = observer_error_values(Z, Y, Q[:, 0], Q[:, 1])

        dQ = np.zeros((self.n_params, w.size, 2), dtype=complex)
        for col in range(r + 3):
            for i in range(r):
                j = i + r * col
                if col < r:
                    dQ[j] = CR[:, i, None] * RB[:, col, :]
                elif col < r + 2:
                    dQ[j, :, col - r] = CR[:, i]
                else:
                    dQ[j] = RB[:, i, :]
        dQu, dQy = dQ[..., 0], dQ[..., 1]
        dG = np.stack([-dQy * Y, -dQu - dQy * Y, -dQy], axis=-1)[:, :, None, :]
        return G, dG

    def closed_loop_matrices(self, mu):
        Aq, Bq, Cq = unpack(mu, self.r)
        return observer_error_realization(self.plant, self.Cz, self.Cy, Aq, Bq, Cq)

    def realization(self, mu):
        """Dense closed loop and doubled-state gradient realizations."""
        mu = np.asarray(mu, dtype=float)
        G = self.closed_loop_matrices(mu)
        N = G.order
        n = N - self.r
        r = self.r
        Cy_full = np.hstack([self.Cy, np.zeros((1, r))])
        grads = []
        for col in range(r + 3):
            for i in range(r):
                dA = np.zeros((N, N))
                dB = np.zeros((N, 3))
                dC = np.zeros((1, N))
                if col < r:
                    dA[n + i, n + col] = 1.0
                elif col == r:
                    dB[n + i, 1] = 1.0
                elif col == r + 1:
                    dB[n + i, 2] = 1.0
                    dA[n + i, :] = Cy_full[0]
                else:
                    dC[0, n + i] = -1.0
                grads.append(derivative_realization(G.A, G.B, G.C, dA, dB, dC))
        return G, grads


class _StructuredCost:
    """Exact ``||G(mu)||^2 / 2`` reusing a plant decomposition across calls.

    The closed-loop state matrix is block lower triangular, so the joint
    Gramian splits into the fixed plant block, an ``n x r`` Sylvester block
    and an ``r x r`` Lyapunov block. In coordinates where the plant matrix
    is diagonal (modal) or upper triangular (complex Schur) the Sylvester
    block costs ``O(n r)`` or ``O(n^2 r)`` per call.
    """

    #: eigenvector condition number above which the Schur form is used
    MODAL_COND_LIMIT = 1e8

    def __init__(self, plant: DescriptorStateSpace, Cz, Cy):
        p = plant.to_dense()
        A, E, B = p.A, p.E, p.B
        symmetric = E is not None and np.allclose(A, A.T) and np.allclose(E, E.T)
        self.modal = True
        if symmetric:
            lam, V = spla.eigh(A, E)
            Vinv_B = V.T @ B
        else:
            Ad = A if E is None else np.linalg.solve(E, A)
            Bd = B if E is None else np.linalg.solve(E, B)
            lam, V = spla.eig(Ad)
            if np.linalg.cond(V) > self.MODAL_COND_LIMIT:
                self.modal = False
            else:
                Vinv_B = np.linalg.solve(V, Bd)
        if self.modal:
            self.T = lam.astype(complex)
            b = Vinv_B.astype(complex)
            cz, cy = Cz @ V, Cy @ V
            # plant Gramian (input intensity 2) in modal coordinates
            Pt = -2.0 * (b @ b.conj().T) / (self.T[:, None] + self.T.conj()[None, :])
            self.g = Pt @ cy.conj().T
            self.zz = float(np.real(cz @ Pt @ cz.conj().T)[0, 0])
        else:
            P11 = spla.solve_continuous_lyapunov(Ad, -2.0 * Bd @ Bd.T)
            self.T, U = spla.schur(Ad.astype(complex), output="complex")
            Uh = U.conj().T
            b = Uh @ Bd
            cz, cy = Cz @ U, Cy @ U
            self.g = Uh @ (P11 @ Cy.T)
            self.zz = float((Cz @ P11 @ Cz.T)[0, 0])
        self.b, self.cz, self.cy = b, cz, cy
        diag = self.T if self.modal else np.diag(self.T)
        self.abscissa = float(np.max(diag.real))

    def rescale_target(self, factor: float) -> None:
        """Account for ``C_z -> factor * C_z``."""
        self.cz = self.cz * factor
        self.zz *= factor**2

    def __call__(self, Aq, Bq, Cq) -> float:
        if not np.any(Cq) or not np.any(Bq):
            # observer disconnected: its modes neither see nor affect the error
            return 0.5 * self.zz
        if spectral_abscissa(Aq) >= 0:
            return math.inf
        Bu, By = Bq[:, :1], Bq[:, 1:2]
        S, W = spla.schur(Aq.T.astype(complex), output="complex")
        F = -(self.g @ By.T + self.b @ Bu.T) @ W
        n, r = F.shape
        Zs = np.zeros((n, r), dtype=complex)
        for k in range(r):
            rhs = F[:, k] - Zs[:, :k] @ S[:k, k]
            if self.modal:
                Zs[:, k] = rhs / (self.T + S[k, k])
            else:
                Zs[:, k] = spla.solve_triangular(self.T + S[k, k] * np.eye(n), rhs)
        # P12 in these coordinates is Zs W^H; only its projections are needed
        Wh = W.conj().T
        CzP12 = np.real(self.cz @ Zs @ Wh)
        CyP12 = np.real(self.cy @ Zs @ Wh)
        Q22 = By @ CyP12 + CyP12.T @ By.T + Bu @ Bu.T + By @ By.T
        P22 = spla.solve_continuous_lyapunov(Aq, -Q22)
        val = self.zz - 2.0 * float((CzP12 @ Cq.T)[0, 0]) + float((Cq @ P22 @ Cq.T)[0, 0])
        return 0.5 * val


@dataclass
class ObserverProblem:
    plant: DescriptorStateSpace
    Cz: np.ndarray
    Cy: np.ndarray
    r: int
    family: ObserverFamily = field(init=False)
    _cost: _StructuredCost | None = field(init=False, default=None, repr=False)

    def __post_init__(self):
        self.family = ObserverFamily(self.plant, self.Cz, self.Cy, self.r)

    @property
    def n_params(self) -> int:
        return self.family.n_params

    def cost(self, mu) -> float:
        """Exact ``c(mu)``; dense structured Gramian up to the oracle cap, quadrature beyond."""
        mu = np.asarray(mu, dtype=float)
        if not np.all(np.isfinite(mu)):
            return math.inf
        Aq, Bq, Cq = unpack(mu, self.r)
        if self.plant.order <= MAX_ORDER:
            if self._cost is None:
                self._cost = _StructuredCost(self.plant, self.Cz, self.Cy)
            return self._cost(Aq, Bq, Cq)
        if spectral_abscissa(Aq) >= 0:
            return math.inf
        return 0.5 * h2_norm_quadrature(self.family.system(mu), rtol=1e-6).value

    def norm(self, mu) -> float:
        c = self.cost(mu)
        return math.inf if math.isinf(c) else math.sqrt(2.0 * max(c, 0.0))


def _plant_abscissa(plant: DescriptorStateSpace) -> float:
    """Rightmost eigenvalue of a large sparse pencil via shift-invert about zero."""
    vals = spla_sparse.eigs(plant.A, k=1, M=plant.E, sigma=0, which="LM", return_eigenvectors=False)
    return float(np.max(vals.real))


def build_observer_problem(plant: DescriptorStateSpace, Cz, Cy, r: int = 2) -> ObserverProblem:
    """Observer problem with ``C_z`` scaled so that ``||G(0)|| = 1``.

    ``G(0) = [Z, Z, 0]`` with ``Z = C_z (sE - A)^{-1} B``, hence
    ``||G(0)||^2 = 2 ||Z||^2``.
    """
    Cz = np.atleast_2d(np.asarray(Cz, dtype=float))
    Cy = np.atleast_2d(np.asarray(Cy, dtype=float))
    if r < 1:
        raise ValueError("observer order must be >= 1")
    if plant.shape[1] != 1 or Cz.shape != (1, plant.order) or Cy.shape != (1, plant.order):
        raise ValueError("observer benchmark expects SISO u, y, z channels matching the plant order")
    if plant.order <= MAX_ORDER:
        sc = _StructuredCost(plant, Cz, Cy)
        if sc.abscissa >= 0:
            raise ValueError("plant is not asymptotically stable")
        # cost at mu = 0 is ||Z||^2 since G(0) = [Z, Z, 0]
        z2 = 0.5 * sc.zz
        scale = 1.0 / math.sqrt(2.0 * z2)
        sc.rescale_target(scale)
        prob = ObserverProblem(plant, Cz * scale, Cy, r)
        prob._cost = sc
        return prob
    if _plant_abscissa(plant) >= 0:
        raise ValueError("plant is not asymptotically stable")
    z2 = h2_norm_quadrature(DescriptorStateSpace(plant.A, plant.B, Cz, plant.E), rtol=1e-6).value
    return ObserverProblem(plant, Cz / math.sqrt(2.0 * z2), Cy, r)


def synthetic_observer_problem(n: int = 2000, r: int = 2, sparse_storage: bool = True, **plant_kw) -> ObserverProblem:
    E, A, B, Cz, Cy = diffusion_plant(n, **plant_kw)
    if not sparse_storage:
        E, A = E.toarray(), A.toarray()
    return build_observer_problem(DescriptorStateSpace(A, B, Cy, E), Cz, Cy, r)


def _matrix(x):
    """Arrays pass through; anything else is read as a Matrix Market path."""
    from ..systems import load_matrix

    if sp.issparse(x) or isinstance(x, np.ndarray):
        return x
    return load_matrix(x)


def load_observer_problem(A, B, Cz, Cy, E=None, r: int = 2) -> ObserverProblem:
    """Observer problem from Matrix Market files (e.g. a large thermal model) or arrays."""
    Am = _matrix(A)
    Em = _matrix(E) if E is not None else None
    Bm = np.atleast_2d(_matrix(B))
    if Bm.shape[0] != Am.shape[0]:
        Bm = Bm.T
    Czm = np.atleast_2d(_matrix(Cz))
    Cym = np.atleast_2d(_matrix(Cy))
    Czm = Czm if Czm.shape[1] == Am.shape[0] else Czm.T
    Cym = Cym if Cym.shape[1] == Am.shape[0] else Cym.T
    if not sp.issparse(Am):
        Am = sp.csc_matrix(Am)
    return build_observer_problem(DescriptorStateSpace(Am, Bm, Cym, Em), Czm, Cym, r)


# --------------------------------------------------------------------------
# initialization by modal truncation + Kalman filter


def _slow_modes(plant: DescriptorStateSpace, r: int):
    """Right/left real bases spanning the `r` eigenvalues closest to the imaginary axis."""
    A, E = plant.A, plant.E
    symmetric = False
    if plant.storage == "sparse":
        symmetric = (abs(A - A.T).max() == 0) and (abs(E - E.T).max() == 0)
    if symmetric:
        lam, V = spla_sparse.eigsh(A, k=r, M=E, sigma=0, which="LM")
        order = np.argsort(-lam)
        return V[:, order], V[:, order]
    d = plant.to_dense()
    Ed = d.E if d.E is not None else np.eye(d.order)
    lam, W, V = spla.eig(d.A, Ed, left=True, right=True)
    order = np.argsort(-lam.real)
    chosen = order[:r]
    lam_c = lam[chosen]
    # a complex pair must be taken whole
    n_complex = np.sum(np.abs(lam_c.imag) > 0)
    if n_complex % 2:
        raise ObserverDesignError(f"order r={r} splits a complex mode pair; use r={r + 1}")
    Vr, Wr = [], []
    for idx in chosen:
        if lam[idx].imag < 0:
            continue
        if lam[idx].imag > 0:
            Vr += [V[:, idx].real, V[:, idx].imag]
            Wr += [W[:, idx].real, W[:, idx].imag]
        else:
            Vr.append(V[:, idx].real)
            Wr.append(W[:, idx].real)
    return np.column_stack(Vr), np.column_stack(Wr)


def modal_truncation(plant: DescriptorStateSpace, Cz, Cy, r: int):
    """Order-`r` Petrov-Galerkin projection onto the slowest modes: ``(A_r, B_r, C_z,r, C_y,r)``."""
    V, W = _slow_modes(plant, r)
    E = plant.E if plant.E is not None else sp.identity(plant.order)
    Er = W.T @ (E @ V)
    Ar = np.linalg.solve(Er, W.T @ (plant.A @ V))
    Br = np.linalg.solve(Er, W.T @ plant.B)
    return Ar, Br, np.atleast_2d(Cz) @ V, np.atleast_2d(Cy) @ V


def initialize_observer(problem: ObserverProblem, mu0=None) -> np.ndarray:
    """Starting point from a Kalman filter designed on a modal-truncation surrogate.

    Process noise enters with the input (unit intensity), measurement noise
    has unit intensity. An explicit `mu0` is returned unchanged.
    """
    if mu0 is not None:
        mu0 = np.asarray(mu0, dtype=float).ravel()
        if mu0.size != problem.n_params:
            raise ValueError(f"mu0 has {mu0.size} entries, expected {problem.n_params}")
        return mu0
    r = problem.r
    if r < 1:
        raise ValueError("observer order must be >= 1")
    Ar, Br, Czr, Cyr = modal_truncation(problem.plant, problem.Cz, problem.Cy, r)
    try:
        P = spla.solve_continuous_are(Ar.T, Cyr.T, Br @ Br.T, np.eye(1))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ObserverDesignError(f"Kalman design on the surrogate failed ({exc}); supply mu0") from exc
    L = P @ Cyr.T
    Aq = Ar - L @ Cyr
    mu = pack(Aq, np.hstack([Br, L]), Czr)
    if not math.isfinite(problem.cost(mu)):
        raise ObserverDesignError("surrogate observer does not stabilize the error map; supply mu0")
    return mu
