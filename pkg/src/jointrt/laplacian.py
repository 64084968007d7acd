"""Laplacian step of the alternating scheme.

At fixed ``R`` the graph is the unique minimizer of

    lambda_l ||L||_F^2 + lambda_s sum_{c,c'} (R_c . R_c') L[c, c']

over Laplacians with trace ``C``. Writing ``L`` through its edge weights
``x_e = -L[c, c'] >= 0`` (one per unordered pair) makes the symmetry and
zero-row-sum constraints structural, leaving the strictly convex QP

    min  1/2 x^T H x + f^T x   s.t.  sum(x) = C / 2,  x >= 0

with ``H = 2 lambda_l (S^T S + 2 I)`` (``S`` the unsigned edge-vertex
incidence) and ``f_e = lambda_s (g_cc + g_c'c' - 2 g_cc')``. It is solved
with a Mehrotra predictor-corrector interior-point method followed by an
active-set polish that snaps inactive weights to exact zeros.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import ParameterError

logger = logging.getLogger(__name__)

GAP_TOL = 1e-10
FEAS_TOL = 1e-10
MAX_NEWTON = 200
WARM_DELTA = 1e-8


class QpError(RuntimeError):
    """Interior-point failure; carries the last iterate and its residuals."""

    def __init__(self, msg, weights=None, residuals=None):
        super().__init__(msg)
        self.weights = weights
        self.residuals = residuals


class FactorizationError(RuntimeError):
    pass


@dataclass
class QpWarmStart:
    """Primal edge weights and multipliers (equality ``nu``, bounds ``s``)."""

    weights: np.ndarray
    nu: float
    s: np.ndarray
    iterations: int = 0


@dataclass(frozen=True)
class WeightMap:
    """Edge parameterization of ``C x C`` Laplacians.

    ``pairs[e] = (c, c')`` with ``c < c'``; ``L(w)`` puts ``w_e <= 0`` on both
    off-diagonal slots and minus the row sum on the diagonal. The trace
    constraint reads ``sum(w) = -C / 2``.
    """

    C: int
    pairs: np.ndarray
    incidence: np.ndarray  # unsigned, C x E

    @property
    def n_edges(self) -> int:
        return len(self.pairs)

    @property
    def weight_sum(self) -> float:
        return -self.C / 2.0

    def to_laplacian(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        L = np.zeros((self.C, self.C))
        i, j = self.pairs[:, 0], self.pairs[:, 1]
        L[i, j] = w
        L[j, i] = w
        L[np.diag_indices(self.C)] = -L.sum(axis=1)
        return L

    def from_laplacian(self, L) -> np.ndarray:
        L = np.asarray(L)
        return L[self.pairs[:, 0], self.pairs[:, 1]].copy()


@lru_cache(maxsize=32)
def reduce_to_weight_vector(C: int) -> WeightMap:
    if C < 2:
        raise ParameterError("a graph Laplacian needs at least C = 2 vertices")
    pairs = np.array([(i, j) for i in range(C) for j in range(i + 1, C)], dtype=int)
    S = np.zeros((C, len(pairs)))
    S[pairs[:, 0], np.arange(len(pairs))] = 1.0
    S[pairs[:, 1], np.arange(len(pairs))] = 1.0
    pairs.setflags(write=False)
    S.setflags(write=False)
    return WeightMap(C, pairs, S)


def gram(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    return R @ R.T


def qp_terms(g, lambda_s: float, lambda_l: float) -> tuple[np.ndarray, np.ndarray, WeightMap]:
    """Hessian ``H`` and linear term ``f`` of the QP in positive edge weights."""
    g = np.asarray(g, dtype=float)
    wm = reduce_to_weight_vector(g.shape[0])
    S = wm.incidence
    H = 2.0 * lambda_l * (S.T @ S + 2.0 * np.eye(wm.n_edges))
    i, j = wm.pairs[:, 0], wm.pairs[:, 1]
    f = lambda_s * (g[i, i] + g[j, j] - 2.0 * g[i, j])
    return H, f, wm


def laplacian_objective(L, g, lambda_s: float, lambda_l: float) -> float:
    L = np.asarray(L)
    return float(lambda_l * np.sum(L * L) + lambda_s * np.sum(np.asarray(g) * L))


def _kkt_residuals(H, f, b, x, nu, s):
    rd = H @ x + f - nu - s
    rp = x.sum() - b
    return rd, rp


def _ipm(H, f, b, x, nu, s):
    n = len(x)
    scale = max(1.0, np.abs(f).max(initial=0.0), np.abs(H).max())
    ones = np.ones(n)
    for it in range(1, MAX_NEWTON + 1):
        rd, rp = _kkt_residuals(H, f, b, x, nu, s)
        mu = x @ s / n
        if (
            mu <= GAP_TOL
            and np.abs(rd).max() <= FEAS_TOL * scale
            and abs(rp) <= FEAS_TOL * max(1.0, b)
        ):
            return x, nu, s, it - 1, True

        M = np.zeros((n + 1, n + 1))
        M[:n, :n] = H + np.diag(s / x)
        M[:n, n] = -1.0
        M[n, :n] = 1.0

        def direction(comp):
            # comp: target of x*s after the step (elementwise)
            rhs = np.concatenate([-rd - s + comp / x, [-rp]])
            sol = np.linalg.solve(M, rhs)
            dx, dnu = sol[:n], sol[n]
            ds = (comp - x * s - s * dx) / x
            return dx, dnu, ds

        def max_step(v, dv):
            neg = dv < 0
            return min(1.0, np.min(-v[neg] / dv[neg])) if neg.any() else 1.0

        # predictor (affine scaling)
        dx_a, _, ds_a = direction(np.zeros(n))
        ap, ad = max_step(x, dx_a), max_step(s, ds_a)
        mu_aff = (x + ap * dx_a) @ (s + ad * ds_a) / n
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector with centering
        dx, dnu, ds = direction(sigma * mu * ones - dx_a * ds_a)
        ap = 0.99 * max_step(x, dx)
        ad = 0.99 * max_step(s, ds)
        x = x + ap * dx
        nu = nu + ad * dnu
        s = s + ad * ds
    rd, rp = _kkt_residuals(H, f, b, x, nu, s)
    raise QpError(
        f"interior point did not converge in {MAX_NEWTON} Newton steps",
        weights=x,
        residuals={"dual": float(np.abs(rd).max()), "primal": float(abs(rp)), "gap": float(x @ s / n)},
    )


def _polish(H, f, b, x, s):
    """Solve the equality-constrained QP on the predicted support."""
    n = len(x)
    free = x > s
    if not free.any():
        return None
    F = np.flatnonzero(free)
    k = len(F)
    M = np.zeros((k + 1, k + 1))
    M[:k, :k] = H[np.ix_(F, F)]
    M[:k, k] = -1.0
    M[k, :k] = 1.0
    rhs = np.concatenate([-f[F], [b]])
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return None
    xp = np.zeros(n)
    xp[F] = sol[:k]
    nu = sol[k]
    sp = H @ xp + f - nu
    sp[F] = 0.0
    scale = max(1.0, np.abs(f).max(initial=0.0), np.abs(H).max())
    if xp[F].min() < 0 or sp.min() < -1e-9 * scale:
        return None
    return xp, nu, np.maximum(sp, 0.0)


def _cold_start(H, f, b):
    n = len(f)
    x = np.full(n, b / n)
    grad = H @ x + f
    nu = grad.min() - max(1.0, 0.1 * np.abs(grad).max())
    return x, nu, grad - nu


def solve_laplacian_qp(
    g, lambda_s: float, lambda_l: float, warm: QpWarmStart | None = None
) -> tuple[np.ndarray, QpWarmStart]:
    """Graph Laplacian minimizing the QP above for Gram matrix ``g``."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ParameterError("Gram matrix must be square")
    if g.shape[0] < 2:
        raise ParameterError("a graph Laplacian needs at least C = 2 vertices")
    if lambda_l <= 0 or lambda_s < 0:
        raise ParameterError("need lambda_l > 0 and lambda_s >= 0")
    H, f, wm = qp_terms(g, lambda_s, lambda_l)
    b = wm.C / 2.0

    result = None
    if warm is not None and len(warm.weights) == wm.n_edges:
        x0 = np.maximum(np.asarray(warm.weights, dtype=float), WARM_DELTA)
        x0 *= b / x0.sum()
        s0 = np.maximum(np.asarray(warm.s, dtype=float), WARM_DELTA)
        try:
            result = _ipm(H, f, b, x0, float(warm.nu), s0)
        except QpError:
            logger.debug("warm-started QP failed, retrying from the cold start")
    if result is None:
        result = _ipm(H, f, b, *_cold_start(H, f, b))
    x, nu, s, iters, _ = result

    polished = _polish(H, f, b, x, s)
    if polished is not None:
        x, nu, s = polished
    else:
        x = np.maximum(x, 0.0)
        x *= b / x.sum()
    L = wm.to_laplacian(-x)
    return L, QpWarmStart(x, float(nu), s, iters)


def check_laplacian(L, tol_sym=0.0, tol_sign=1e-12, tol_rows=1e-9, tol_trace=1e-9) -> list[str]:
    """Return the list of violated admissibility conditions (empty when valid)."""
    L = np.asarray(L)
    C = L.shape[0]
    issues = []
    if np.abs(L - L.T).max() > tol_sym:
        issues.append("asymmetric")
    off = L[~np.eye(C, dtype=bool)]
    if off.size and off.max() > tol_sign:
        issues.append("positive off-diagonal")
    if np.abs(L.sum(axis=1)).max() > tol_rows:
        issues.append("nonzero row sum")
    if abs(np.trace(L) - C) > tol_trace:
        issues.append("trace != C")
    return issues


def cholesky_factor(L) -> np.ndarray:
    """Square factor ``B`` with ``B^T B = L + eps I``, ``eps = 1e-12 trace(L) / C``.

    The Laplacian is singular, hence the jitter. If Cholesky still fails on
    rounding noise, a symmetric eigen-factor is used instead.
    """
    L = np.asarray(L, dtype=float)
    C = L.shape[0]
    eps = 1e-12 * np.trace(L) / C
    M = L + eps * np.eye(C)
    try:
        return np.linalg.cholesky(M).T
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
        if vals.min() < -1e-9 * max(1.0, np.trace(L)):
            raise FactorizationError(
                f"matrix is not positive semidefinite (min eigenvalue {vals.min():.3e})"
            ) from None
        return np.sqrt(np.maximum(vals, 0.0))[:, None] * vecs.T
