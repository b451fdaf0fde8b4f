"""Exact small-scale ground truth for H2 quantities.

Infinite cost is reported as ``math.inf`` (an unstable operand), never
raised, so optimizer checkpoints can store it.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla

from .systems import DescriptorStateSpace, FrequencySystem, ParametrizedSystem

#: dense oracle refuses larger realizations unless told otherwise
MAX_ORDER = 2000


class OracleSizeError(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


def dense_realization(sys: DescriptorStateSpace, max_order: int = MAX_ORDER) -> DescriptorStateSpace:
    """Dense ``(A, B, C)`` with ``E = I``; an invertible ``E`` is applied explicitly."""
    if sys.order > max_order:
        raise OracleSizeError(f"order {sys.order} exceeds the oracle cap {max_order}")
    sys = sys.to_dense()
    if sys.E is None:
        return sys
    if np.linalg.cond(sys.E) > 1e12:
        raise ValueError("descriptor matrix E is singular; no dense oracle realization")
    return DescriptorStateSpace(np.linalg.solve(sys.E, sys.A), np.linalg.solve(sys.E, sys.B), sys.C)


def spectral_abscissa(sys) -> float:
    """Largest real part of the (generalized) eigenvalues of ``(A, E)``."""
    if isinstance(sys, DescriptorStateSpace):
        sys = sys.to_dense()
        A, E = sys.A, sys.E
    else:
        A, E = np.atleast_2d(sys), None
    if A.shape[0] == 0:
        return -math.inf
    ev = spla.eigvals(A, E)
    ev = ev[np.isfinite(ev)]
    return float(np.max(ev.real)) if ev.size else -math.inf


def is_stable(sys) -> bool:
    return spectral_abscissa(sys) < 0


def h2_inner(sys_a: DescriptorStateSpace, sys_b: DescriptorStateSpace, max_order: int = MAX_ORDER) -> float:
    """H2 inner product ``(1/2pi) int tr(A(iw) B(-iw)^T) dw`` via a Sylvester equation.

    ``X`` solves ``A_a X + X A_b^T + B_a B_b^T = 0`` and the product is
    ``tr(C_a X C_b^T)``. Returns ``inf`` if either system is not
    asymptotically stable.
    """
    if sys_a.shape != sys_b.shape:
        raise ValueError(f"I/O dimensions differ: {sys_a.shape} vs {sys_b.shape}")
    a = dense_realization(sys_a, max_order)
    b = dense_realization(sys_b, max_order)
    if not (is_stable(a) and is_stable(b)):
        return math.inf
    X = spla.solve_sylvester(a.A, b.A.T, -a.B @ b.B.T)
    return float(np.trace(a.C @ X @ b.C.T))


def h2_norm(sys: DescriptorStateSpace, max_order: int = MAX_ORDER) -> float:
    """H2 norm (not squared) via the controllability Gramian."""
    a = dense_realization(sys, max_order)
    if not is_stable(a):
        return math.inf
    P = spla.solve_continuous_lyapunov(a.A, -a.B @ a.B.T)
    return math.sqrt(max(float(np.trace(a.C @ P @ a.C.T)), 0.0))


def exact_cost(ps: ParametrizedSystem, mu) -> float:
    """``c(mu) = ||G(mu)||^2 / 2`` from a state-space realization."""
    G, _ = ps.realization(mu)
    val = h2_inner(G, G)
    return math.inf if math.isinf(val) else 0.5 * val


def exact_gradient(ps: ParametrizedSystem, mu) -> np.ndarray:
    """Stacked ``<G(mu), dG/dmu_j(mu)>``; all-``inf`` when ``G(mu)`` is unstable."""
    G, grads = ps.realization(mu)
    if not is_stable(dense_realization(G)):
        return np.full(len(grads), math.inf)
    return np.array([h2_inner(G, dG) for dG in grads])


# --------------------------------------------------------------------------
# quadrature

# Gauss-Kronrod 7/15 nodes and weights on [-1, 1]
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KW = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GW = np.zeros(15)
_GW[1::2] = np.concatenate([_WG[:3], [_WG[3]], _WG[2::-1]])


def _frob2(sys: FrequencySystem, w: np.ndarray) -> np.ndarray:
    vals = sys.freqresp(w)
    return np.sum(np.abs(vals) ** 2, axis=(1, 2))


@dataclass
class QuadratureResult:
    """``value`` is the squared H2 norm restricted to the support."""

    value: float
    error: float
    truncation_residual: float
    panels: int

    @property
    def norm(self) -> float:
        return math.sqrt(max(self.value, 0.0))


def _adaptive(fun, edges, rtol, atol, max_panels):
    heap = []
    total = 0.0
    total_err = 0.0

    def eval_panels(lefts, rights):
        mids = 0.5 * (lefts + rights)
        halves = 0.5 * (rights - lefts)
        x = (mids[:, None] + halves[:, None] * _NODES[None]).ravel()
        fx = fun(x).reshape(lefts.size, 15)
        k = halves * (fx @ _KW)
        g = halves * (fx @ _GW)
        return k, np.abs(k - g)

    k, e = eval_panels(edges[:-1], edges[1:])
    for lft, rgt, kk, ee in zip(edges[:-1], edges[1:], k, e):
        heapq.heappush(heap, (-ee, lft, rgt, kk))
        total += kk
        total_err += ee
    count = len(heap)
    while total_err > max(atol, rtol * abs(total)):
        if count >= max_panels:
            raise QuadratureError(
                f"no convergence after {count} panels: value={total:.6g}, error={total_err:.3g}")
        batch = [heapq.heappop(heap) for _ in range(min(len(heap), 64))]
        lefts = np.array([b_[1] for b_ in batch])
        rights = np.array([b_[2] for b_ in batch])
        for b_ in batch:
            total -= b_[3]
            total_err -= -b_[0]
        mids = 0.5 * (lefts + rights)
        L = np.concatenate([lefts, mids])
        R = np.concatenate([mids, rights])
        k, e = eval_panels(L, R)
        for lft, rgt, kk, ee in zip(L, R, k, e):
            heapq.heappush(heap, (-ee, lft, rgt, kk))
            total += kk
            total_err += ee
        count += len(batch)
    return total, total_err, count


def h2_norm_quadrature(sys: FrequencySystem, support=(0.0, math.inf), rtol: float = 1e-8,
                       atol: float = 1e-14, max_panels: int = 200_000, breakpoints=None,
                       panels_per_piece: int | None = None) -> QuadratureResult:
    """Squared H2 norm by adaptive Gauss-Kronrod quadrature over ``±support``.

    Only ``omega >= 0`` is integrated (conjugate symmetry) and doubled. Finite
    positive `lo` uses a logarithmic variable, an infinite upper limit the
    variable ``1/omega``. `breakpoints` (e.g. resonance frequencies) become
    initial panel edges so narrow peaks are not stepped over. The truncation
    residual is the first-order tail estimate
    ``|G(i hi)|^2 hi + |G(i lo)|^2 lo``, scaled like the integral.
    """
    lo, hi = float(support[0]), float(support[1])
    if not (0 <= lo < hi):
        raise ValueError(f"invalid support {support}")
    pieces = []
    if math.isinf(hi):
        split = max(lo, 1.0)
        if lo < split:
            pieces.append(("lin", lo, split))
        pieces.append(("inv", split, hi))
    elif lo > 0:
        pieces.append(("log", lo, hi))
    else:
        split = min(1.0, hi)
        pieces.append(("lin", 0.0, split))
        if hi > split:
            pieces.append(("log", split, hi))
    bps = np.abs(np.asarray([] if breakpoints is None else breakpoints, dtype=float).ravel())

    value = err = 0.0
    panels = 0
    for kind, a, b in pieces:
        inside = bps[(bps > a) & (bps < b)]
        if kind == "lin":
            def fun(t):
                return _frob2(sys, t)
            to_t = np.asarray
            ta, tb, n0 = a, b, 8
        elif kind == "log":
            def fun(t):
                w = np.exp(t)
                return _frob2(sys, w) * w
            to_t = np.log
            ta, tb = math.log(a), math.log(b)
            n0 = max(8, int(4 * (tb - ta)))
        else:  # omega = 1/u with u in (0, 1/a]
            def fun(u):
                return _frob2(sys, 1.0 / u) / (u * u)

            def to_t(w):
                return 1.0 / w
            ta, tb, n0 = 0.0, 1.0 / a, 8
        if panels_per_piece:
            n0 = panels_per_piece
        edges = np.unique(np.concatenate([np.linspace(ta, tb, n0 + 1), to_t(inside)]))
        v, e, c = _adaptive(fun, edges, rtol, atol, max_panels)
        value += v
        err += e
        panels += c
    scale = 2.0 / (2.0 * math.pi)
    resid = 0.0
    if math.isfinite(hi):
        resid += float(_frob2(sys, np.array([hi]))[0]) * hi
    if lo > 0:
        resid += float(_frob2(sys, np.array([lo]))[0]) * lo
    return QuadratureResult(scale * value, scale * err, scale * resid, panels)


class PoleResidueSystem(FrequencySystem):
    """Diagonalized realization: ``G(s) = sum_k c_k b_k^T / (s - lambda_k)``.

    Evaluation costs O(n) per frequency once the eigendecomposition is done.
    """

    def __init__(self, sys: DescriptorStateSpace, max_order: int = MAX_ORDER):
        d = dense_realization(sys, max_order)
        lam, V = np.linalg.eig(d.A)
        if np.linalg.cond(V) > 1e10:
            raise ValueError("realization is too close to defective for a pole-residue form")
        self.poles = lam
        self.c = d.C @ V
        self.b = np.linalg.solve(V, d.B)
        self.shape = sys.shape

    def freqresp(self, omegas):
        w = np.atleast_1d(np.asarray(omegas, dtype=float))
        out = np.empty((w.size,) + self.shape, dtype=complex)
        step = max(1, 2_000_000 // max(self.poles.size, 1))
        for i in range(0, w.size, step):
            r = 1.0 / (1j * w[i:i + step, None] - self.poles[None])
            out[i:i + step] = np.einsum("ak,mk,kb->mab", self.c, r, self.b)
        return out


# --------------------------------------------------------------------------
# Endpoint bound used in the variance argument


def lemma_norm_xi_check(x, y) -> bool:
    """``max_{xi in [0,1]} |x| |xi x + y| <= 2 (|x|^2 + |y|^2)``.

    ``|xi x + y|`` is convex in ``xi``, so the maximum sits at an endpoint.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx = np.linalg.norm(x)
    lhs = nx * max(np.linalg.norm(y), np.linalg.norm(x + y))
    return bool(lhs <= 2.0 * (nx**2 + np.linalg.norm(y) ** 2))


# --------------------------------------------------------------------------
# monolithic realizations of the interconnections (cross-checks only)


def siso_feedback_realization(plant: DescriptorStateSpace, Ak, Bk, Ck, Dk) -> DescriptorStateSpace:
    """Closed loop ``d -> (y, u)`` with ``y = P (d + u)``, ``u = K y``.

    `plant` must be strictly proper; the controller may have feedthrough.
    """
    p = dense_realization(plant)
    A, B, C = p.A, p.B, p.C
    Ak, Bk, Ck = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (Ak, Bk, Ck))
    Dk = float(np.asarray(Dk).squeeze())
    nk = Ak.shape[0]
    Acl = np.block([[A + Dk * B @ C, B @ Ck], [Bk @ C, Ak]])
    Bcl = np.vstack([B, np.zeros((nk, 1))])
    Ccl = np.vstack([np.hstack([C, np.zeros((1, nk))]), np.hstack([Dk * C, Ck])])
    return DescriptorStateSpace(Acl, Bcl, Ccl)


def observer_error_realization(plant: DescriptorStateSpace, Cz, Cy, Aq, Bq, Cq) -> DescriptorStateSpace:
    """``(w, u, v) -> z - zhat`` for a plant ``x' = A x + B (u + w)`` and a full observer.

    `plant` supplies ``E, A, B`` (its ``C`` is ignored); ``Bq = [B_u, B_y]``.
    """
    p = dense_realization(DescriptorStateSpace(plant.A, plant.B, np.atleast_2d(Cz), plant.E))
    A, B = p.A, p.B
    Cz = np.atleast_2d(Cz)
    Cy = np.atleast_2d(Cy)
    Aq, Bq, Cq = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (Aq, Bq, Cq))
    n, r = A.shape[0], Aq.shape[0]
    Bu, By = Bq[:, :1], Bq[:, 1:2]
    Acl = np.block([[A, np.zeros((n, r))], [By @ Cy, Aq]])
    Bcl = np.block([[B, B, np.zeros((n, 1))], [np.zeros((r, 1)), Bu, By]])
    Ccl = np.hstack([Cz, -Cq])
    return DescriptorStateSpace(Acl, Bcl, Ccl)
