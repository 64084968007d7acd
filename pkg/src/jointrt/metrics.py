"""Accuracy metrics for reproduction numbers and learned graphs."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .model import ParameterError


def mrse(R_hat, R_star) -> float:
    """Mean relative squared error ``mean(((R_hat - R_star) / R_star)**2)``."""
    R_hat = np.asarray(R_hat, dtype=float)
    R_star = np.asarray(R_star, dtype=float)
    if R_hat.shape != R_star.shape:
        raise ParameterError(f"shape mismatch {R_hat.shape} vs {R_star.shape}")
    if np.any(R_star <= 0):
        raise ParameterError("ground truth must be positive everywhere")
    return float(np.mean(((R_hat - R_star) / R_star) ** 2))


def laplacian_recovery_error(L_hat, L_star) -> float:
    """``||L_hat - L_star||_F^2 / ||L_star||_F^2``."""
    L_hat = np.asarray(L_hat, dtype=float)
    L_star = np.asarray(L_star, dtype=float)
    if L_hat.shape != L_star.shape:
        raise ParameterError(f"shape mismatch {L_hat.shape} vs {L_star.shape}")
    denom = np.sum(L_star**2)
    if denom == 0:
        raise ParameterError("reference Laplacian is zero")
    return float(np.sum((L_hat - L_star) ** 2) / denom)


class SupportRecovery(NamedTuple):
    exact: bool
    false_positives: int
    false_negatives: int


def edge_set(L, threshold: float) -> set[tuple[int, int]]:
    L = np.asarray(L)
    i, j = np.nonzero(np.triu(np.abs(L) > threshold, k=1))
    return set(zip(i.tolist(), j.tolist()))


def support_recovery(L_hat, L_star, threshold: float) -> SupportRecovery:
    """Compare the edges of ``L_hat`` above ``threshold`` with those of ``L_star``."""
    if threshold <= 0:
        raise ParameterError("threshold must be positive")
    est = edge_set(L_hat, threshold)
    true = edge_set(L_star, 0.0)
    fp, fn = len(est - true), len(true - est)
    return SupportRecovery(fp == 0 and fn == 0, fp, fn)


def connected_components(L, threshold: float = 0.0) -> list[list[int]]:
    """Vertex groups of the graph with edges ``|L[c, c']| > threshold``."""
    from scipy.sparse.csgraph import connected_components as cc

    A = (np.abs(np.asarray(L)) > threshold).astype(int)
    np.fill_diagonal(A, 0)
    n, labels = cc(A, directed=False)
    return [np.flatnonzero(labels == k).tolist() for k in range(n)]
