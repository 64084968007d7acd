"""Closed-form reference estimators: maximum likelihood and EpiEstim."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ParameterError, as_counts


@dataclass(frozen=True)
class EpiEstimConfig:
    """Trailing window ``tau`` (days, odd) and gamma prior (shape ``a``, scale ``b``)."""

    tau: int = 7
    a: float = 1.0
    b: float = 5.0

    def __post_init__(self):
        if int(self.tau) != self.tau or self.tau < 1 or self.tau % 2 == 0:
            raise ParameterError("tau must be a positive odd integer")
        if self.a <= 0 or self.b <= 0:
            raise ParameterError("prior shape and scale must be positive")


def ml_estimate(Z, phi_z, return_mask: bool = False):
    """``Z / phi_z`` where ``phi_z > 0``; zero elsewhere.

    With ``return_mask`` the boolean mask of cells set by convention is
    returned as well.
    """
    Z = as_counts(Z)
    phi_z = np.asarray(phi_z, dtype=float)
    undefined = phi_z <= 0
    R = np.zeros_like(Z)
    np.divide(Z, phi_z, out=R, where=~undefined)
    return (R, undefined) if return_mask else R


def _trailing_sum(X: np.ndarray, tau: int) -> np.ndarray:
    cs = np.cumsum(X, axis=1)
    out = cs.copy()
    out[:, tau:] -= cs[:, :-tau]
    return out


def epiestim_estimate(Z, phi_z, cfg: EpiEstimConfig = EpiEstimConfig()) -> np.ndarray:
    """Posterior mean of a gamma-prior Poisson model on a trailing window.

    ``R[c, t] = (a + sum Z) / (1/b + sum phi_z)`` with sums over days
    ``t - tau + 1 .. t``, truncated at the start of the series.
    """
    Z = as_counts(Z)
    phi_z = np.asarray(phi_z, dtype=float)
    return (cfg.a + _trailing_sum(Z, cfg.tau)) / (1.0 / cfg.b + _trailing_sum(phi_z, cfg.tau))
