"""Chambolle-Pock resolution of the fixed-graph estimator.

The estimator minimizes, over nonnegative ``R``,

    sum_c omega_c KL(Z_c | R_c * phi_z_c)
        + lambda_t sum_c ||D2 R_c||_1 + lambda_s sum_t ||B R_t||^2

written as ``F(R) + G(K R)`` with ``K R = (D2 R_c for each row, B R_t for
each column)``. ``B`` is any ``C x C`` factor with ``B^T B = L``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigvals_banded

from . import _kernels
from .model import ParameterError, as_counts, as_omega, infeasible_cells

logger = logging.getLogger(__name__)


class DimensionError(ParameterError):
    """Raised when a series is too short for the second-order difference."""


@dataclass
class DualVars:
    """Dual iterate: temporal block ``q_t`` (C, T-2), spatial block ``q_s`` (C, T)."""

    q_t: np.ndarray
    q_s: np.ndarray | None = None

    def copy(self) -> "DualVars":
        return DualVars(self.q_t.copy(), None if self.q_s is None else self.q_s.copy())


@dataclass(frozen=True)
class PdConfig:
    lambda_t: float = 1.0
    lambda_s: float = 0.0
    epsilon: float = 1e-7
    k_max: int = 50_000

    def __post_init__(self):
        if self.lambda_t <= 0 or self.lambda_s < 0:
            raise ParameterError("lambda_t must be positive and lambda_s nonnegative")
        if self.epsilon <= 0 or self.k_max < 1:
            raise ParameterError("epsilon and k_max must be positive")


@dataclass
class FixLResult:
    r: np.ndarray
    dual: DualVars
    iterations: int
    converged: bool
    objective: float


def second_difference(R: np.ndarray) -> np.ndarray:
    """Row-wise interior stencil ``R[t-1] - 2 R[t] + R[t+1]``."""
    return R[:, :-2] - 2.0 * R[:, 1:-1] + R[:, 2:]


def second_difference_adjoint(q: np.ndarray) -> np.ndarray:
    C, n = q.shape
    out = np.zeros((C, n + 2))
    out[:, :-2] += q
    out[:, 1:-1] -= 2.0 * q
    out[:, 2:] += q
    return out


def apply_K(R, b_tilde: np.ndarray | None) -> DualVars:
    """Stack the temporal second differences and the spatial factor images."""
    R = np.asarray(R, dtype=float)
    if R.shape[1] < 3:
        raise DimensionError("need at least T = 3 days for a second difference")
    q_s = None if b_tilde is None else np.asarray(b_tilde) @ R
    return DualVars(second_difference(R), q_s)


def adjoint_K(Q: DualVars, b_tilde: np.ndarray | None) -> np.ndarray:
    out = second_difference_adjoint(Q.q_t)
    if b_tilde is not None and Q.q_s is not None:
        out += np.asarray(b_tilde).T @ Q.q_s
    return out


def prox_kl(x, step, omega, phi, z):
    """Proximity operator of ``r -> step * omega * KL(z | r * phi)``.

    Vectorized over all arguments. Cells with ``phi == 0`` carry no finite
    fidelity and reduce to the projection onto ``[0, inf)``.
    """
    x, step, omega, phi, z = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x, step, omega, phi, z))
    )
    active = phi > 0
    a = x - np.where(active, step * omega * phi, 0.0)
    c = np.where(active, step * omega * z, 0.0)
    disc = np.sqrt(a * a + 4.0 * c)
    with np.errstate(divide="ignore", invalid="ignore"):
        neg = np.where(c > 0, 2.0 * c / (disc - a), 0.0)
    out = np.where(a >= 0, 0.5 * (a + disc), neg)
    return out[()] if out.ndim == 0 else out


def prox_l1(x, threshold: float):
    """Soft thresholding."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


def prox_sq_l2(x, step_lambda: float):
    """Proximity operator of ``step_lambda * ||.||^2``."""
    return np.asarray(x, dtype=float) / (1.0 + 2.0 * step_lambda)


def dual_prox(Q: DualVars, sigma: float, lambda_t: float, lambda_s: float) -> DualVars:
    """Prox of ``sigma G^*`` through the Moreau identity."""
    q_t = Q.q_t - sigma * prox_l1(Q.q_t / sigma, lambda_t / sigma)
    q_s = None
    if Q.q_s is not None:
        if lambda_s > 0:
            q_s = Q.q_s - sigma * prox_sq_l2(Q.q_s / sigma, lambda_s / sigma)
        else:
            q_s = np.zeros_like(Q.q_s)
    return DualVars(q_t, q_s)


@lru_cache(maxsize=64)
def _d2_sq_norm(T: int) -> float:
    if T < 3:
        raise DimensionError("need at least T = 3 days for a second difference")
    d2 = second_difference(np.eye(T)).T
    gram = d2.T @ d2
    # upper band storage of the pentadiagonal D2^T D2
    bands = np.zeros((3, T))
    for k in range(3):
        bands[2 - k, k:] = np.diagonal(gram, k)
    return float(eigvals_banded(bands, select="i", select_range=(T - 1, T - 1))[0])


def operator_norm_K(b_tilde: np.ndarray | None, T: int, safety: float = 1.01) -> float:
    """Upper bound on ``||K||`` for step-size selection.

    ``K^T K`` is the Kronecker sum of ``D2^T D2`` (time) and ``B^T B``
    (space), so its top eigenvalue is the sum of the two top eigenvalues.
    """
    sq = _d2_sq_norm(int(T))
    if b_tilde is not None:
        b = np.asarray(b_tilde, dtype=float)
        sq += float(np.linalg.eigvalsh(b.T @ b)[-1])
    return safety * float(np.sqrt(sq))


def ml_start(Z, phi_z) -> np.ndarray:
    """``Z / phi_z`` with zero wherever ``phi_z`` vanishes."""
    Z = as_counts(Z)
    phi_z = np.asarray(phi_z, dtype=float)
    out = np.zeros_like(Z, dtype=float)
    np.divide(Z, phi_z, out=out, where=phi_z > 0)
    return out


def fix_l_objective(Z, R, phi_z, omega, b_tilde, lambda_t, lambda_s) -> float:
    """Objective of the fixed-graph problem; infeasible cells are left out."""
    Z = as_counts(Z)
    w = _fidelity_weights(Z, phi_z, omega)
    B, use_spatial = _spatial(b_tilde, Z.shape[0], lambda_s)
    return float(
        _kernels.objective(
            Z, np.ascontiguousarray(phi_z, dtype=float), w, B, use_spatial,
            float(lambda_t), float(lambda_s), np.ascontiguousarray(R, dtype=float),
        )
    )


def _fidelity_weights(Z, phi_z, omega) -> np.ndarray:
    w = np.repeat(as_omega(omega)[:, None], Z.shape[1], axis=1)
    bad = infeasible_cells(Z, phi_z)
    if bad.any():
        logger.debug("%d cells with Z > 0 and phi_z = 0 left out of the fidelity", bad.sum())
        w[bad] = 0.0
    return w


def _spatial(b_tilde, C, lambda_s):
    if b_tilde is None or lambda_s == 0:
        return np.zeros((C, C)), False
    return np.ascontiguousarray(b_tilde, dtype=float), True


def default_step_ratio(Z, omega, lambda_t: float, lambda_s: float) -> float:
    """Primal/dual step ratio ``tau / sigma = rho**2`` used by default.

    Empirical rule: the dual block scales with the penalties, the primal
    curvature with ``kappa = median(omega * Z)``; small ratios pay off when
    the penalties dominate.
    """
    Z = as_counts(Z)
    wz = as_omega(omega)[:, None] * Z
    kappa = float(np.median(wz[Z > 0])) if np.any(Z > 0) else 1.0
    return 0.01 * kappa / (lambda_t + 0.3 * np.sqrt(lambda_s * kappa))


def solve_fix_L(
    Z,
    phi_z,
    omega,
    b_tilde: np.ndarray | None,
    cfg: PdConfig,
    warm_R: np.ndarray | None = None,
    warm_Q: DualVars | None = None,
    check_every: int = 100,
    step_ratio: float | None = None,
) -> FixLResult:
    """Chambolle-Pock iterations for the fixed-graph problem.

    Steps ``tau = 0.99 rho / ||K||`` and ``sigma = 0.99 / (rho ||K||)``
    with ``rho`` from :func:`default_step_ratio` unless given. Stops when the relative primal
    and dual increments both fall below ``cfg.epsilon``, or after
    ``cfg.k_max`` iterations (``converged`` is then False). The returned
    iterate is the best objective value among periodic checkpoints, the
    final iterate and the warm start.

    ``b_tilde=None`` (or ``lambda_s == 0``) disables the spatial block.
    """
    Z = as_counts(Z)
    phi_z = np.ascontiguousarray(phi_z, dtype=float)
    C, T = Z.shape
    if phi_z.shape != (C, T):
        raise ParameterError(f"phi_z shape {phi_z.shape} != counts shape {(C, T)}")
    if T < 3:
        raise DimensionError("need at least T = 3 days for a second difference")
    B, use_spatial = _spatial(b_tilde, C, cfg.lambda_s)
    w = _fidelity_weights(Z, phi_z, omega)

    R0 = ml_start(Z, phi_z) if warm_R is None else np.array(warm_R, dtype=float)
    if R0.shape != (C, T):
        raise ParameterError(f"warm start shape {R0.shape} != {(C, T)}")
    R0 = np.maximum(R0, 0.0)
    if warm_Q is None:
        warm_Q = apply_K(R0, B if use_spatial else None)
    Qt0 = np.ascontiguousarray(warm_Q.q_t, dtype=float)
    if use_spatial and warm_Q.q_s is not None:
        Qs0 = np.ascontiguousarray(warm_Q.q_s, dtype=float)
    elif use_spatial:
        Qs0 = B @ R0
    else:
        Qs0 = np.zeros((C, T))

    norm = operator_norm_K(B if use_spatial else None, T)
    if step_ratio is None:
        step_ratio = default_step_ratio(Z, omega, cfg.lambda_t, cfg.lambda_s if use_spatial else 0.0)
    tau, sigma = 0.99 * step_ratio / norm, 0.99 / (step_ratio * norm)
    R, Qt, Qs, k, converged, obj = _kernels.cp_loop(
        np.ascontiguousarray(Z, dtype=float), phi_z, w, B, use_spatial,
        float(cfg.lambda_t), float(cfg.lambda_s), tau, sigma,
        float(cfg.epsilon), int(cfg.k_max), R0, Qt0, Qs0, int(check_every),
    )
    if not converged:
        logger.debug("fix-L solver hit k_max = %d", cfg.k_max)
    q_s = Qs if use_spatial else (None if warm_Q.q_s is None else np.asarray(warm_Q.q_s))
    return FixLResult(R, DualVars(Qt, q_s), int(k), bool(converged), float(obj))
