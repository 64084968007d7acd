"""Ground-truthed spatiotemporal datasets.

Territories are split into clusters; every cluster shares one
reproduction-number trajectory and the true graph is the union of complete,
mutually disconnected subgraphs. Counts follow the scaled Poisson renewal
model ``Z[c, t] / gamma_c ~ Poisson(R[c, t] * phi_z[c, t] / gamma_c)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (
    CountMatrix,
    ParameterError,
    ScaleParams,
    SerialInterval,
    infectiousness,
    omega_heuristic,
    serial_interval_weights,
)

GENERATOR_VERSION = "piecewise-linear-1"
MAX_RATE = 1e12
R_RANGE = (0.5, 2.0)
R_FLOOR = 0.2


@dataclass(frozen=True)
class ClusterSpec:
    """Cluster index (0-based) of each territory."""

    assignment: tuple[int, ...]

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1 or a.size == 0 or a.min() < 0:
            raise ParameterError("assignment must be a non-empty vector of cluster indices")
        if set(a.tolist()) != set(range(a.max() + 1)):
            raise ParameterError("every cluster index in 0..I-1 must be used")

    @classmethod
    def equal(cls, C: int, I: int) -> "ClusterSpec":
        """``C`` territories in ``I`` contiguous clusters of (near) equal size."""
        if not 1 <= I <= C:
            raise ParameterError("need 1 <= I <= C")
        return cls(tuple(int(i) for i in np.arange(C) * I // C))

    @property
    def C(self) -> int:
        return len(self.assignment)

    @property
    def I(self) -> int:  # noqa: E743
        return max(self.assignment) + 1

    def members(self, i: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.assignment) == i)


@dataclass
class SyntheticDataset:
    Z: CountMatrix
    R_star: np.ndarray
    L_star: np.ndarray
    scale: ScaleParams
    seed: int
    spec: ClusterSpec
    history: np.ndarray
    phi: SerialInterval = field(default_factory=serial_interval_weights)

    @property
    def phi_z(self) -> np.ndarray:
        return infectiousness(self.Z, self.phi, history=self.history)


def cluster_laplacian(spec: ClusterSpec) -> np.ndarray:
    a = np.asarray(spec.assignment)
    W = (a[:, None] == a[None, :]).astype(float)
    np.fill_diagonal(W, 0.0)
    if not W.any():
        raise ParameterError("all clusters are singletons: the empty graph is not admissible")
    L = np.diag(W.sum(axis=1)) - W
    return L * (spec.C / np.trace(L))


def blur_laplacian(L_star, blur_weight: float) -> np.ndarray:
    """Add ``blur_weight`` to every absent edge and renormalize to trace ``C``."""
    L_star = np.asarray(L_star, dtype=float)
    C = L_star.shape[0]
    W = -L_star.copy()
    np.fill_diagonal(W, 0.0)
    if blur_weight < 0:
        raise ParameterError("blur_weight must be nonnegative")
    present = W[W > 0]
    if present.size and blur_weight >= present.min():
        raise ParameterError("blur_weight must stay below the smallest true weight")
    absent = (W == 0) & ~np.eye(C, dtype=bool)
    W[absent] = blur_weight
    L = np.diag(W.sum(axis=1)) - W
    return L * (C / np.trace(L))


def _within_growth_bounds(r: np.ndarray, phi: np.ndarray, bounds) -> bool:
    """Whether the noiseless renewal epidemic (flat unit history) stays in ``bounds``."""
    tau = len(phi)
    rev = phi[::-1]
    x = np.ones(tau + len(r))
    for t, rt in enumerate(r):
        x[tau + t] = v = rt * (rev @ x[t : t + tau])
        if not bounds[0] <= v <= bounds[1]:
            return False
    return True


def generate_r_dagger(
    T: int,
    I: int,
    seed: int | np.random.SeedSequence,
    phi: SerialInterval | None = None,
    growth_bounds: tuple[float, float] = (1 / 3, 3.0),
    max_draws: int = 1_000_000,
) -> np.ndarray:
    """Piecewise-linear reproduction numbers, one row per cluster.

    Each row interpolates between values drawn log-uniformly in ``[0.5, 2]``
    at both ends and at 4 to 8 interior breakpoints placed uniformly at
    random. Draws whose noiseless renewal epidemic leaves ``growth_bounds``
    (relative to the initial incidence) are rejected so that the epidemic
    neither dies out nor explodes over ``T`` days.
    """
    if T < 30:
        raise ParameterError("need T >= 30")
    phi_w = (phi or serial_interval_weights()).weights
    rng = np.random.default_rng(seed)
    out = np.empty((I, T))
    lo, hi = np.log(R_RANGE[0]), np.log(R_RANGE[1])
    for i in range(I):
        for _ in range(max_draws):
            n_bp = rng.integers(4, 9)
            knots = np.sort(rng.choice(np.arange(1, T - 1), size=n_bp, replace=False))
            knots = np.concatenate([[0], knots, [T - 1]])
            values = np.exp(rng.uniform(lo, hi, size=len(knots)))
            r = np.maximum(np.interp(np.arange(T), knots, values), R_FLOOR)
            if _within_growth_bounds(r, phi_w, growth_bounds):
                break
        else:
            raise RuntimeError("could not draw a trajectory within the growth bounds")
        out[i] = r
    return out


def sample_counts(
    R_star,
    Z0,
    phi: SerialInterval,
    seed: int | np.random.SeedSequence,
) -> tuple[np.ndarray, ScaleParams, np.ndarray]:
    """Sequential scaled-Poisson sampling of counts.

    ``gamma_c = 0.01 * Z0[c]``; the ``tau_phi`` days preceding the first
    day are seeded with the constant ``Z0[c]``. Each territory draws from
    its own stream spawned from ``seed``.

    Returns the counts, the scale parameters (with the heuristic
    ``omega``) and the seeding history.
    """
    R_star = np.asarray(R_star, dtype=float)
    C, T = R_star.shape
    Z0 = np.broadcast_to(np.asarray(Z0, dtype=float), (C,)).copy()
    if np.any(Z0 <= 0):
        raise ParameterError("initial counts Z0 must be positive")
    gamma = 0.01 * Z0
    w = phi.weights
    tau = len(w)
    wr = w[::-1]
    history = np.repeat(Z0[:, None], tau, axis=1)
    full = np.hstack([history, np.zeros((C, T))])
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    for c, child in enumerate(ss.spawn(C)):
        rng = np.random.default_rng(child)
        for t in range(T):
            rate = R_star[c, t] * (wr @ full[c, t : t + tau]) / gamma[c]
            if rate > MAX_RATE:
                raise ParameterError(
                    f"Poisson rate {rate:.3g} overflows at territory {c}, day {t}; the epidemic "
                    "grows too fast (rates scale as Z / gamma, so lower R_star or T, not Z0)"
                )
            full[c, tau + t] = gamma[c] * rng.poisson(rate)
    Z = full[:, tau:]
    return Z, ScaleParams(gamma, omega_heuristic(Z)), history


def make_dataset(
    spec: ClusterSpec | None = None,
    T: int = 300,
    seed: int = 0,
    Z0: float | np.ndarray = 1000.0,
    phi: SerialInterval | None = None,
) -> SyntheticDataset:
    """Full synthetic instance (defaults: 9 territories in 3 clusters, 300 days)."""
    spec = spec or ClusterSpec.equal(9, 3)
    phi = phi or serial_interval_weights()
    r_seed, z_seed = np.random.SeedSequence(seed).spawn(2)
    r_dagger = generate_r_dagger(T, spec.I, r_seed, phi=phi)
    R_star = r_dagger[np.asarray(spec.assignment)]
    Z, scale, history = sample_counts(R_star, Z0, phi, z_seed)
    dates = list(range(T))
    ids = [f"c{c}" for c in range(spec.C)]
    return SyntheticDataset(
        CountMatrix(Z, ids, dates), R_star, cluster_laplacian(spec), scale, seed, spec, history, phi
    )


def save_dataset(ds: SyntheticDataset, out_dir) -> list[Path]:
    from .io import write_matrix_csv, write_json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = ds.Z.territory_ids
    files = [
        write_matrix_csv(out / "counts.csv", ds.Z.counts, ids, ds.Z.dates),
        write_matrix_csv(out / "r_star.csv", ds.R_star, ids, ds.Z.dates),
        write_matrix_csv(out / "l_star.csv", ds.L_star, ids, ids),
        write_matrix_csv(out / "history.csv", ds.history, ids, list(range(-ds.history.shape[1], 0))),
    ]
    meta = {
        "seed": ds.seed,
        "gamma": ds.scale.gamma.tolist(),
        "omega": ds.scale.omega.tolist(),
        "assignment": list(ds.spec.assignment),
        "serial_interval": {
            "mean_days": ds.phi.mean_days,
            "std_days": ds.phi.std_days,
            "truncation": ds.phi.truncation,
        },
        "generator_version": GENERATOR_VERSION,
    }
    files.append(write_json(out / "metadata.json", meta))
    return files


def load_dataset(path) -> SyntheticDataset:
    from .io import read_matrix_csv

    path = Path(path)
    meta = json.loads((path / "metadata.json").read_text())
    counts, ids, dates = read_matrix_csv(path / "counts.csv")
    R_star, _, _ = read_matrix_csv(path / "r_star.csv")
    L_star, _, _ = read_matrix_csv(path / "l_star.csv")
    history, _, _ = read_matrix_csv(path / "history.csv")
    si = meta["serial_interval"]
    phi = serial_interval_weights(si["mean_days"], si["std_days"], si["truncation"])
    return SyntheticDataset(
        CountMatrix(counts, ids, dates),
        R_star,
        L_star,
        ScaleParams(np.array(meta["gamma"]), np.array(meta["omega"])),
        int(meta["seed"]),
        ClusterSpec(tuple(meta["assignment"])),
        history,
        phi,
    )
