"""Hyperparameter grid search and the six-method synthetic benchmark."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .baselines import EpiEstimConfig, epiestim_estimate, ml_estimate
from .joint import JointConfig, default_start, descent_violations, estimate_joint
from .laplacian import cholesky_factor
from .metrics import laplacian_recovery_error, mrse, support_recovery
from .model import ParameterError
from .proximal import PdConfig, solve_fix_L
from .synthetic import SyntheticDataset, blur_laplacian, make_dataset

logger = logging.getLogger(__name__)

METHODS = ("ml", "epiestim", "fix-l-empty", "fix-l-blur", "fix-l-star", "joint")
LABELS = {
    "ml": "ML",
    "epiestim": "EpiEstim",
    "fix-l-empty": "fix-L(empty)",
    "fix-l-blur": "fix-L(blur)",
    "fix-l-star": "fix-L(true)",
    "joint": "Joint",
}
PARAM_ORDER = ("lambda_t", "lambda_s", "lambda_l", "tau")
BLUR_WEIGHT = 0.05
SUPPORT_THRESHOLD = 1e-6
MRSE_SCALE = 1e4


def log_grid(lo: float, hi: float, n: int) -> tuple[float, ...]:
    """``n`` geometrically spaced values including both endpoints."""
    if n < 1 or lo <= 0 or hi < lo:
        raise ParameterError("need n >= 1 and 0 < lo <= hi")
    if n == 1:
        return (float(lo),)
    return tuple(float(v) for v in np.geomspace(lo, hi, n))


@dataclass(frozen=True)
class GridSpec:
    """Candidate values per hyperparameter; each method reads the ones it uses."""

    lambda_t: tuple[float, ...] = (1.0,)
    lambda_s: tuple[float, ...] = (1.0,)
    lambda_l: tuple[float, ...] = (1.0,)
    tau: tuple[int, ...] = (7,)

    def __post_init__(self):
        for name in PARAM_ORDER:
            vals = tuple(getattr(self, name))
            object.__setattr__(self, name, vals)
            if not vals:
                raise ParameterError(f"grid for {name} is empty")
            if min(vals) <= 0:
                raise ParameterError(f"grid for {name} must be positive")
        if any(int(t) != t or t % 2 == 0 or not 1 <= t <= 29 for t in self.tau):
            raise ParameterError("tau values must be odd integers in 1..29")

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        """Values as lists or as ``{"min": .., "max": .., "n": ..}`` geometric ranges."""
        kw = {}
        for name, v in d.items():
            if name not in PARAM_ORDER:
                raise ParameterError(f"unknown grid key {name!r}")
            if isinstance(v, dict):
                v = log_grid(v["min"], v["max"], int(v["n"]))
            kw[name] = tuple(int(x) for x in v) if name == "tau" else tuple(float(x) for x in v)
        return cls(**kw)

    def points(self, method: str) -> list[dict]:
        names = {
            "ml": (),
            "epiestim": ("tau",),
            "fix-l-empty": ("lambda_t",),
            "fix-l-blur": ("lambda_t", "lambda_s"),
            "fix-l-star": ("lambda_t", "lambda_s"),
            "joint": ("lambda_t", "lambda_s", "lambda_l"),
        }[method]
        return [dict(zip(names, combo)) for combo in product(*(getattr(self, n) for n in names))]


def default_grids(smoke: bool = False) -> dict[str, GridSpec]:
    """64 values of lambda_T for fix-L(empty), 16x16 for fix-L, 8x8x8 for Joint.

    ``smoke`` shrinks the Joint grid to 4x4x4.
    """
    n_joint = 4 if smoke else 8
    return {
        "ml": GridSpec(),
        "epiestim": GridSpec(tau=tuple(range(1, 30, 2))),
        "fix-l-empty": GridSpec(lambda_t=log_grid(1, 100, 64)),
        "fix-l-blur": GridSpec(lambda_t=log_grid(1, 100, 16), lambda_s=log_grid(0.01, 1000, 16)),
        "fix-l-star": GridSpec(lambda_t=log_grid(1, 100, 16), lambda_s=log_grid(0.01, 1000, 16)),
        "joint": GridSpec(
            lambda_t=log_grid(1, 100, n_joint),
            lambda_s=log_grid(0.01, 1000, n_joint),
            lambda_l=log_grid(0.001, 100, n_joint),
        ),
    }


def load_grids(path, smoke: bool = False) -> dict[str, GridSpec]:
    """Defaults overridden per method by a JSON file ``{method: {param: values}}``."""
    grids = default_grids(smoke)
    for method, d in json.loads(Path(path).read_text()).items():
        if method not in METHODS:
            raise ParameterError(f"unknown method {method!r} in grid file")
        grids[method] = GridSpec.from_dict(d)
    return grids


@dataclass(frozen=True)
class BenchSolver:
    """Inner-solver settings used during grid search.

    With ``continuation`` the fixed-graph solves along the lambda_S axis
    are chained, each one warm started from the previous solution.
    """

    epsilon: float = 1e-5
    k_max: int = 20_000
    n_max: int = 10
    continuation: bool = True


@dataclass
class PointResult:
    params: dict
    mrse: float
    error: str | None = None
    violations: list[str] = field(default_factory=list)
    l_hat: np.ndarray | None = None


@dataclass
class GridResult:
    method: str
    best_params: dict
    best_mrse: float
    points: list[PointResult]

    @property
    def n_failed(self) -> int:
        return sum(p.error is not None for p in self.points)

    @property
    def best_point(self) -> PointResult:
        return next(p for p in self.points if p.params == self.best_params)


def _graph_for(method: str, ds: SyntheticDataset) -> np.ndarray | None:
    if method == "fix-l-star":
        return ds.L_star
    if method == "fix-l-blur":
        return blur_laplacian(ds.L_star, BLUR_WEIGHT)
    return None


def _eval_closed_form(method, ds, params) -> list[PointResult]:
    phi_z = ds.phi_z
    if method == "ml":
        R = ml_estimate(ds.Z.counts, phi_z)
    else:
        R = epiestim_estimate(ds.Z.counts, phi_z, EpiEstimConfig(tau=params["tau"]))
    return [PointResult(params, mrse(R, ds.R_star))]


def _eval_fix_l_chain(method, ds, chain, solver: BenchSolver) -> list[PointResult]:
    """Points sharing lambda_T, in increasing lambda_S."""
    Z, phi_z, omega = ds.Z.counts, ds.phi_z, ds.scale.omega
    L = _graph_for(method, ds)
    B = None if L is None else cholesky_factor(L)
    R0 = default_start(Z, phi_z)
    R, Q = R0, None
    out = []
    for params in chain:
        cfg = PdConfig(params["lambda_t"], params.get("lambda_s", 0.0), solver.epsilon, solver.k_max)
        try:
            fit = solve_fix_L(Z, phi_z, omega, B, cfg, warm_R=R, warm_Q=Q)
            out.append(PointResult(params, mrse(fit.r, ds.R_star)))
            if solver.continuation:
                R, Q = fit.r, fit.dual
        except Exception as exc:  # noqa: BLE001
            out.append(PointResult(params, math.inf, error=f"{type(exc).__name__}: {exc}"))
            R, Q = R0, None
    return out


def _eval_joint(ds, params, solver: BenchSolver) -> list[PointResult]:
    cfg = JointConfig(
        params["lambda_t"], params["lambda_s"], params["lambda_l"],
        n_max=solver.n_max, epsilon=solver.epsilon, k_max=solver.k_max,
    )
    try:
        res = estimate_joint(ds.Z.counts, ds.phi, ds.scale.omega, cfg, history=ds.history)
    except Exception as exc:  # noqa: BLE001
        return [PointResult(params, math.inf, error=f"{type(exc).__name__}: {exc}")]
    return [PointResult(params, mrse(res.r_hat, ds.R_star), violations=descent_violations(res), l_hat=res.l_hat)]


def _run_task(task):
    kind, method, ds, payload, solver = task
    if kind == "closed":
        return _eval_closed_form(method, ds, payload)
    if kind == "chain":
        return _eval_fix_l_chain(method, ds, payload, solver)
    return _eval_joint(ds, payload, solver)


def _tasks(method, ds, grid: GridSpec, solver: BenchSolver):
    points = grid.points(method)
    if method in ("ml", "epiestim"):
        return [("closed", method, ds, p, solver) for p in points]
    if method == "joint":
        return [("joint", method, ds, p, solver) for p in points]
    if not solver.continuation:
        return [("chain", method, ds, [p], solver) for p in points]
    chains: dict[float, list[dict]] = {}
    for p in points:
        chains.setdefault(p["lambda_t"], []).append(p)
    return [
        ("chain", method, ds, sorted(c, key=lambda p: p.get("lambda_s", 0.0)), solver)
        for _, c in sorted(chains.items())
    ]


def _sort_key(p: PointResult):
    return (p.mrse, *(p.params.get(n, 0.0) for n in PARAM_ORDER))


def grid_search(
    method: str,
    ds: SyntheticDataset,
    grid: GridSpec,
    solver: BenchSolver = BenchSolver(),
    n_jobs: int = 1,
    executor=None,
) -> GridResult:
    """Exhaustive search for the smallest mRSE.

    Ties go to the lexicographically smallest (lambda_T, lambda_S,
    lambda_L, tau). A point whose solver raises counts as infinite mRSE.
    """
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    tasks = _tasks(method, ds, grid, solver)
    if executor is not None:
        chunks = list(executor.map(_run_task, tasks))
    elif n_jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            chunks = list(ex.map(_run_task, tasks))
    else:
        chunks = [_run_task(t) for t in tasks]
    points = [p for chunk in chunks for p in chunk]
    best = min(points, key=_sort_key)
    return GridResult(method, dict(best.params), best.mrse, points)


def _ci(values) -> tuple[float, float]:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size < 2:
        return float(v.mean()), math.nan
    return float(v.mean()), float(1.96 * v.std(ddof=1) / math.sqrt(v.size))


@dataclass
class BenchReport:
    """Per-method mRSE over seeds plus graph-recovery diagnostics of Joint."""

    seeds: list[int]
    methods: list[str]
    mrse: dict[str, list[float]]
    best_params: dict[str, list[dict]]
    failures: dict[str, list[str]]
    laplacian_error: list[float]
    support: list[dict]
    violations: list[str]
    n_joint_runs: int
    settings: dict
    runtime_seconds: float = 0.0

    def mean(self, method: str) -> float:
        return _ci(self.mrse[method])[0]

    def half_width(self, method: str) -> float:
        return _ci(self.mrse[method])[1]

    def summary(self) -> dict:
        return {
            m: {
                "mean_mrse_x1e4": self.mean(m) * MRSE_SCALE,
                "ci95_half_width_x1e4": self.half_width(m) * MRSE_SCALE,
            }
            for m in self.methods
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["summary"] = self.summary()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchReport":
        d = {k: v for k, v in d.items() if k != "summary"}
        return cls(**d)

    def to_table(self) -> str:
        n = len(self.seeds)
        lines = [f"mRSE x 1e4 over {n} seeds (mean +/- 95% Gaussian half-width)", ""]
        lines.append(" ".join(f"{LABELS[m]:>14}" for m in self.methods))
        lines.append(
            " ".join(
                f"{self.mean(m) * MRSE_SCALE:>7.2f} +/-{self.half_width(m) * MRSE_SCALE:>5.2f}".rjust(14)
                for m in self.methods
            )
        )
        if "joint" in self.methods and self.laplacian_error:
            exact = sum(s["exact"] for s in self.support)
            lines += [
                "",
                f"Joint Laplacian relative error: median {np.median(self.laplacian_error):.2e}, "
                f"max {np.max(self.laplacian_error):.2e}",
                f"Joint support recovered at threshold {SUPPORT_THRESHOLD:g}: {exact}/{len(self.support)} seeds",
                f"descent / admissibility violations over {self.n_joint_runs} Joint runs: {len(self.violations)}",
            ]
        n_failed = sum(len(v) for v in self.failures.values())
        lines.append(f"failed grid points: {n_failed}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> list[Path]:
        from .io import write_json, write_text_atomic

        out = Path(out_dir)
        return [
            write_json(out / "bench_report.json", self.to_dict()),
            write_text_atomic(out / "bench_report.txt", self.to_table()),
        ]


def run_benchmark(
    n_seeds: int,
    grids: dict[str, GridSpec] | None = None,
    out_dir=None,
    solver: BenchSolver = BenchSolver(),
    seed0: int = 0,
    n_jobs: int = 1,
    methods: tuple[str, ...] = METHODS,
    progress=None,
) -> BenchReport:
    """Grid-searched mRSE of every method on ``n_seeds`` synthetic datasets.

    Dataset ``k`` uses seed ``seed0 + k`` (9 territories, 3 clusters, 300
    days). Every Joint run of the grid is checked for objective descent and
    Laplacian admissibility; the best Joint point per seed is scored for
    graph recovery.
    """
    if n_seeds < 2:
        raise ParameterError("need at least 2 seeds for confidence intervals")
    grids = {**default_grids(), **(grids or {})}
    seeds = list(range(seed0, seed0 + n_seeds))
    report = BenchReport(
        seeds=seeds,
        methods=list(methods),
        mrse={m: [] for m in methods},
        best_params={m: [] for m in methods},
        failures={m: [] for m in methods},
        laplacian_error=[],
        support=[],
        violations=[],
        n_joint_runs=0,
        settings={
            "solver": asdict(solver),
            "grids": {m: asdict(grids[m]) for m in methods},
            "blur_weight": BLUR_WEIGHT,
            "support_threshold": SUPPORT_THRESHOLD,
        },
    )
    t0 = time.perf_counter()
    executor = ProcessPoolExecutor(max_workers=n_jobs) if n_jobs > 1 else None
    try:
        for seed in seeds:
            ds = make_dataset(seed=seed)
            for m in methods:
                res = grid_search(m, ds, grids[m], solver, executor=executor)
                report.mrse[m].append(res.best_mrse)
                report.best_params[m].append(res.best_params)
                report.failures[m].extend(f"seed {seed} {p.params}: {p.error}" for p in res.points if p.error)
                if m == "joint":
                    report.n_joint_runs += len(res.points)
                    for p in res.points:
                        report.violations.extend(f"seed {seed} {p.params} {v}" for v in p.violations)
                    L_hat = res.best_point.l_hat
                    if L_hat is not None:
                        report.laplacian_error.append(laplacian_recovery_error(L_hat, ds.L_star))
                        report.support.append(support_recovery(L_hat, ds.L_star, SUPPORT_THRESHOLD)._asdict())
                if progress:
                    progress(seed, m, res)
    finally:
        if executor is not None:
            executor.shutdown()
    report.runtime_seconds = time.perf_counter() - t0
    if out_dir is not None:
        report.write(out_dir)
    return report
