"""Domain types and deterministic epidemic-model computations.

Infection counts are stored as a ``(C, T)`` array: one row per territory,
one column per day. The reproduction number matrix ``R`` and the global
infectiousness ``phi_z`` share that shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc

#: COVID-19 serial interval (days).
COVID_SI_MEAN = 6.6
COVID_SI_STD = 3.5
COVID_SI_TRUNCATION = 25


class ParameterError(ValueError):
    """Raised when a function receives parameters outside its domain."""


@dataclass(frozen=True)
class SerialInterval:
    weights: np.ndarray
    mean_days: float
    std_days: float

    @property
    def truncation(self) -> int:
        return len(self.weights)

    @property
    def shape(self) -> float:
        return (self.mean_days / self.std_days) ** 2

    @property
    def scale(self) -> float:
        return self.std_days**2 / self.mean_days


@dataclass
class CountMatrix:
    """Daily counts with their territory labels and day stamps."""

    counts: np.ndarray
    territory_ids: list[str] = field(default_factory=list)
    dates: list = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.ndim != 2:
            raise ParameterError("counts must be a C x T matrix")
        C, T = self.counts.shape
        if not self.territory_ids:
            self.territory_ids = [f"territory_{c}" for c in range(C)]
        if not self.dates:
            self.dates = list(range(T))
        if len(self.territory_ids) != C or len(self.dates) != T:
            raise ParameterError(
                f"labels ({len(self.territory_ids)}) / dates ({len(self.dates)}) "
                f"do not match counts shape {self.counts.shape}"
            )
        if np.any(self.counts < 0) or not np.all(np.isfinite(self.counts)):
            raise ParameterError("counts must be finite and nonnegative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape


@dataclass(frozen=True)
class ScaleParams:
    """Per-territory variance scales ``gamma`` and fidelity weights ``omega``."""

    gamma: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.gamma) <= 0) or np.any(np.asarray(self.omega) <= 0):
            raise ParameterError("gamma and omega must be positive")


def as_counts(Z) -> np.ndarray:
    """Return the raw count array of a ``CountMatrix`` or array-like."""
    if isinstance(Z, CountMatrix):
        return Z.counts
    Z = np.asarray(Z, dtype=float)
    return Z[None, :] if Z.ndim == 1 else Z


def as_omega(omega) -> np.ndarray:
    if isinstance(omega, ScaleParams):
        return np.asarray(omega.omega, dtype=float)
    return np.atleast_1d(np.asarray(omega, dtype=float))


def serial_interval_weights(
    mean_days: float = COVID_SI_MEAN,
    std_days: float = COVID_SI_STD,
    truncation: int = COVID_SI_TRUNCATION,
) -> SerialInterval:
    """Discretize a gamma serial interval on the unit intervals ``(s-1, s]``.

    The gamma law is moment matched (shape ``(mean/std)**2``, scale
    ``std**2/mean``); the mass of lags ``1..truncation`` is renormalized to
    sum to one.
    """
    if mean_days <= 0 or std_days <= 0:
        raise ParameterError("serial interval mean and std must be positive")
    if int(truncation) != truncation or truncation < 1:
        raise ParameterError("truncation must be a positive integer")
    k = (mean_days / std_days) ** 2
    theta = std_days**2 / mean_days
    cdf = gammainc(k, np.arange(int(truncation) + 1) / theta)
    w = np.diff(cdf)
    total = w.sum()
    if total <= 0:
        raise ParameterError("serial interval has no mass within the truncation window")
    return SerialInterval(w / total, float(mean_days), float(std_days))


def infectiousness(
    Z, phi: SerialInterval | np.ndarray, history: np.ndarray | None = None
) -> np.ndarray:
    """Global infectiousness ``sum_s phi[s] Z[c, t-s]``.

    Lags reaching before the first day read from ``history`` (counts of the
    days preceding ``Z``, oldest first) when given, and count as zero
    otherwise.
    """
    Z = as_counts(Z)
    w = phi.weights if isinstance(phi, SerialInterval) else np.asarray(phi, dtype=float)
    C, T = Z.shape
    if history is not None:
        history = np.asarray(history, dtype=float).reshape(C, -1)
        H = history.shape[1]
        return infectiousness(np.hstack([history, Z]), w)[:, H:]
    out = np.zeros((C, T))
    for s in range(1, min(len(w), T - 1) + 1):
        out[:, s:] += w[s - 1] * Z[:, : T - s]
    return out


def kl_term(z, p):
    """Elementwise Kullback-Leibler divergence ``d(z | p)``.

    ``z ln(z/p) + p - z`` for positive arguments, ``p`` when ``z == 0``
    and ``+inf`` otherwise. Scalars in, scalar out.
    """
    z = np.asarray(z, dtype=float)
    p = np.asarray(p, dtype=float)
    out = np.full(np.broadcast(z, p).shape, np.inf)
    z, p = np.broadcast_arrays(z, p)
    pos = (z > 0) & (p > 0)
    # log difference rather than log ratio: z / p can under- or overflow
    out[pos] = z[pos] * (np.log(z[pos]) - np.log(p[pos])) + p[pos] - z[pos]
    zero = (z == 0) & (p >= 0)
    out[zero] = p[zero]
    return out[()] if out.ndim == 0 else out


def data_fidelity(Z, R, phi_z, omega, mask: np.ndarray | None = None) -> float:
    """Weighted KL fidelity ``sum_c omega_c sum_t d(Z | R * phi_z)``.

    ``mask`` (boolean, True = keep) drops cells from the sum; by default
    every cell counts and infeasible cells yield ``inf``.
    """
    Z = as_counts(Z)
    terms = kl_term(Z, np.asarray(R) * np.asarray(phi_z))
    if mask is not None:
        terms = np.where(mask, terms, 0.0)
    return float(np.sum(as_omega(omega)[:, None] * terms))


def infeasible_cells(Z, phi_z) -> np.ndarray:
    """Cells with positive counts but no infectiousness (no finite fidelity)."""
    return (as_counts(Z) > 0) & (np.asarray(phi_z) <= 0)


def omega_heuristic(Z) -> np.ndarray:
    """KL weights ``1 / std(Z[c, :])`` with a floor of one on the std."""
    return 1.0 / np.maximum(np.std(as_counts(Z), axis=1), 1.0)
