"""Alternating minimization of the joint objective over ``R`` and ``L``."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .baselines import EpiEstimConfig, epiestim_estimate
from .laplacian import QpWarmStart, cholesky_factor, gram, solve_laplacian_qp
from .model import (
    ParameterError,
    SerialInterval,
    as_counts,
    data_fidelity,
    infeasible_cells,
    infectiousness,
)
from .proximal import PdConfig, apply_K, second_difference, solve_fix_L

logger = logging.getLogger(__name__)


class JointSolverError(RuntimeError):
    """Inner-solver failure; ``trace`` holds the objective values reached so far."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class JointConfig:
    lambda_t: float
    lambda_s: float
    lambda_l: float
    n_max: int = 10
    epsilon: float = 1e-7
    k_max: int = 50_000

    def __post_init__(self):
        if min(self.lambda_t, self.lambda_s, self.lambda_l) <= 0:
            raise ParameterError("lambda_t, lambda_s and lambda_l must be positive")
        if self.n_max < 1:
            raise ParameterError("n_max must be at least 1")

    @property
    def pd(self) -> PdConfig:
        return PdConfig(self.lambda_t, self.lambda_s, self.epsilon, self.k_max)


@dataclass
class JointResult:
    r_hat: np.ndarray
    l_hat: np.ndarray
    objective_trace: list[float] = field(default_factory=list)
    trace_labels: list[str] = field(default_factory=list)
    inner_iterations: list[int] = field(default_factory=list)
    qp_iterations: list[int] = field(default_factory=list)
    laplacians: list[np.ndarray] = field(default_factory=list)


def joint_objective(Z, phi_z, omega, R, L, lambda_t, lambda_s, lambda_l) -> float:
    """Fidelity + temporal l1 + graph total variation + Frobenius penalty.

    Cells with positive counts and zero infectiousness are left out of the
    fidelity, as in the solver.
    """
    Z = as_counts(Z)
    R = np.asarray(R, dtype=float)
    L = np.asarray(L, dtype=float)
    mask = ~infeasible_cells(Z, phi_z)
    fid = data_fidelity(Z, R, phi_z, omega, mask=mask)
    tv = np.abs(second_difference(R)).sum()
    graph_tv = np.einsum("it,ij,jt->", R, L, R)
    return float(fid + lambda_t * tv + lambda_s * graph_tv + lambda_l * np.sum(L * L))


def default_start(Z, phi_z) -> np.ndarray:
    """Territory-wise EpiEstim estimate on a 7-day window."""
    return epiestim_estimate(Z, phi_z, EpiEstimConfig(tau=7))


def _phi_z(Z, phi, history):
    return infectiousness(Z, phi, history=history)


def estimate_fix_L(
    Z,
    phi: SerialInterval,
    omega,
    L,
    lambda_t: float,
    lambda_s: float,
    pd_cfg: PdConfig | None = None,
    R_init=None,
    history=None,
):
    """Fixed-graph estimate of ``R``; ``L`` may be the zero matrix (empty graph).

    Returns the :class:`~jointrt.proximal.FixLResult` of the inner solver.
    """
    Z = as_counts(Z)
    phi_z = _phi_z(Z, phi, history)
    base = pd_cfg or PdConfig()
    cfg = PdConfig(lambda_t, lambda_s, base.epsilon, base.k_max)
    L = np.asarray(L, dtype=float)
    b_tilde = None if not L.any() else cholesky_factor(L)
    R0 = default_start(Z, phi_z) if R_init is None else R_init
    return solve_fix_L(Z, phi_z, omega, b_tilde, cfg, warm_R=R0)


def estimate_joint(
    Z,
    phi: SerialInterval,
    omega,
    cfg: JointConfig,
    R_init=None,
    history=None,
) -> JointResult:
    """Alternate R-steps (primal-dual) and L-steps (QP), warm starting both.

    The objective is recorded after the initial graph step and after every
    subsequent half-step; ``trace_labels`` tells them apart.
    """
    Z = as_counts(Z)
    phi_z = _phi_z(Z, phi, history)
    R = default_start(Z, phi_z) if R_init is None else np.maximum(np.asarray(R_init, float), 0.0)
    if R.shape != Z.shape:
        raise ParameterError(f"R_init shape {R.shape} != counts shape {Z.shape}")
    lt, ls, ll = cfg.lambda_t, cfg.lambda_s, cfg.lambda_l
    res = JointResult(R, None)

    def record(label, R, L):
        res.objective_trace.append(joint_objective(Z, phi_z, omega, R, L, lt, ls, ll))
        res.trace_labels.append(label)

    warm: QpWarmStart | None = None
    try:
        L, warm = solve_laplacian_qp(gram(R), ls, ll)
        res.qp_iterations.append(warm.iterations)
        res.laplacians.append(L)
        record("L0", R, L)
        B = cholesky_factor(L)
        Q = apply_K(R, B)
        for n in range(cfg.n_max):
            fit = solve_fix_L(Z, phi_z, omega, B, cfg.pd, warm_R=R, warm_Q=Q)
            R, Q = fit.r, fit.dual
            res.inner_iterations.append(fit.iterations)
            record(f"R{n + 1}", R, L)
            L, warm = solve_laplacian_qp(gram(R), ls, ll, warm=warm)
            res.qp_iterations.append(warm.iterations)
            res.laplacians.append(L)
            record(f"L{n + 1}", R, L)
            B = cholesky_factor(L)
    except Exception as exc:  # noqa: BLE001
        raise JointSolverError(f"inner solver failed: {exc}", res.objective_trace) from exc
    res.r_hat, res.l_hat = R, L
    return res


def descent_violations(
    result: JointResult, r_slack: float = 1e-6, l_slack: float = 1e-9
) -> list[str]:
    """Half-steps of ``result.objective_trace`` that increased the objective.

    An R-step may increase the value by ``r_slack`` relative (inner solver
    tolerance); an L-step by ``l_slack * max(1, |previous|)`` (the QP is
    solved to high accuracy). Laplacian iterates that leave the admissible
    set are reported too.
    """
    from .laplacian import check_laplacian

    out = []
    tr, labels = result.objective_trace, result.trace_labels
    for prev, cur, lab in zip(tr, tr[1:], labels[1:]):
        slack = (r_slack if lab.startswith("R") else l_slack) * max(1.0, abs(prev))
        if not cur <= prev + slack:
            out.append(f"{lab}: objective rose from {prev!r} to {cur!r}")
    for n, L in enumerate(result.laplacians):
        out.extend(f"L{n}: {issue}" for issue in check_laplacian(L))
    return out
