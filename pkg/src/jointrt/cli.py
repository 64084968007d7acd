"""Command-line entry point: ``jointrt <subcommand> ...``.

Every subcommand writes its outputs plus a ``manifest.json`` into
``--out-dir``. Failures print a one-line JSON object on stderr and exit
with a nonzero status.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import EpiEstimConfig, epiestim_estimate, ml_estimate
from .bench import (
    METHODS,
    BenchSolver,
    GridSpec,
    default_grids,
    grid_search,
    load_grids,
    run_benchmark,
)
from .io import (
    SAMPLE_COUNTRIES,
    SAMPLE_END,
    SAMPLE_START,
    IngestConfig,
    IngestError,
    RunManifest,
    ingest_history,
    ingest_jhu,
    read_matrix_csv,
    write_matrix_csv,
    write_tidy_csv,
)
from .joint import JointConfig, JointSolverError, estimate_fix_L, estimate_joint, joint_objective
from .laplacian import FactorizationError, QpError, gram, laplacian_objective, solve_laplacian_qp
from .model import CountMatrix, ParameterError, infectiousness, omega_heuristic, serial_interval_weights
from .proximal import PdConfig
from .synthetic import ClusterSpec, load_dataset, make_dataset, save_dataset

logger = logging.getLogger("jointrt")

EXIT_INPUT = 1
EXIT_SOLVER = 3
EXIT_INTERNAL = 4
PLOT_SERIES = ("counts", "r_hat", "r_star")
CLI_METHODS = ("ml", "epiestim", "fix-l", "joint")


class CliError(Exception):
    pass


# -- inputs --------------------------------------------------------------------------


class Inputs:
    """Counts plus whatever the input source provides alongside them."""

    def __init__(self, counts: CountMatrix, history, omega, r_star=None, dataset=None):
        self.counts = counts
        self.history = history
        self.omega = omega
        self.r_star = r_star
        self.dataset = dataset


def _load_inputs(args) -> Inputs:
    src = Path(args.input)
    phi = serial_interval_weights()
    if src.is_dir():
        if (src / "metadata.json").is_file() and (src / "r_star.csv").is_file():
            ds = load_dataset(src)
            return Inputs(ds.Z, ds.history, ds.scale.omega, ds.R_star, ds)
        if not (src / "counts.csv").is_file():
            raise CliError(f"{src} contains no counts.csv")
        M, ids, dates = read_matrix_csv(src / "counts.csv")
        counts = CountMatrix(M, ids, dates)
        history = read_matrix_csv(src / "history.csv")[0] if (src / "history.csv").is_file() else None
        return Inputs(counts, history, omega_heuristic(M))
    cfg = IngestConfig(
        src, tuple(args.countries), args.start, args.end, clip=not args.no_clip, smooth=args.smooth
    )
    counts = ingest_jhu(cfg)
    history = ingest_history(cfg, phi.truncation)
    return Inputs(counts, history, omega_heuristic(counts.counts))


def _read_grid(path, method: str) -> GridSpec:
    d = json.loads(Path(path).read_text())
    bench_id = {"fix-l": "fix-l-empty"}.get(method, method)
    if any(k in METHODS for k in d):
        d = d.get(bench_id) or d.get(method)
        if d is None:
            raise CliError(f"grid file has no entry for method {method!r}")
    return GridSpec.from_dict(d)


# -- subcommands ------------------------------------------------------------------


def cmd_simulate(args, manifest: RunManifest) -> list[Path]:
    if args.assignment:
        spec = ClusterSpec(tuple(int(a) for a in args.assignment.split(",")))
    else:
        spec = ClusterSpec.equal(args.territories, args.clusters)
    ds = make_dataset(spec=spec, T=args.T, seed=args.seed, Z0=args.z0)
    manifest.seed = args.seed
    return save_dataset(ds, args.out_dir)


def _grid_best(args, inp: Inputs) -> dict:
    if inp.dataset is None:
        raise CliError("--grid needs a simulated dataset directory (ground truth r_star.csv)")
    method = {"fix-l": "fix-l-star" if args.graph else "fix-l-empty"}.get(args.method, args.method)
    if args.method == "fix-l" and args.graph:
        # score against the supplied graph rather than the stored truth
        L, _, _ = read_matrix_csv(args.graph)
        inp.dataset.L_star = L
    grid = _read_grid(args.grid, args.method)
    solver = BenchSolver(epsilon=args.epsilon, k_max=args.k_max, n_max=args.n_max)
    res = grid_search(method, inp.dataset, grid, solver)
    logger.info("grid search: best %s with mRSE %.6g", res.best_params, res.best_mrse)
    return res.best_params


def cmd_estimate(args, manifest: RunManifest) -> list[Path]:
    inp = _load_inputs(args)
    manifest.add_input(args.input)
    Z = inp.counts.counts
    ids, dates = inp.counts.territory_ids, inp.counts.dates
    phi = serial_interval_weights()
    phi_z = infectiousness(Z, phi, history=inp.history)
    params = _grid_best(args, inp) if args.grid else {}
    for name in ("lambda_t", "lambda_s", "lambda_l", "tau"):
        if getattr(args, name) is not None:
            params[name] = getattr(args, name)
    manifest.config["resolved_hyperparameters"] = params
    out = Path(args.out_dir)
    files = []
    if args.method == "ml":
        R = ml_estimate(Z, phi_z)
    elif args.method == "epiestim":
        R = epiestim_estimate(Z, phi_z, EpiEstimConfig(tau=params.get("tau", 7)))
    elif args.method == "fix-l":
        C = Z.shape[0]
        if args.graph:
            L, _, _ = read_matrix_csv(args.graph)
            manifest.add_input(args.graph)
        else:
            L = np.zeros((C, C))
        lt, ls = params.get("lambda_t", 10.0), params.get("lambda_s", 10.0)
        fit = estimate_fix_L(
            Z, phi, inp.omega, L, lt, ls, PdConfig(lt, ls, args.epsilon, args.k_max), history=inp.history
        )
        R = fit.r
        value = joint_objective(Z, phi_z, inp.omega, R, L, lt, ls, 0.0)
        files.append(_write_trace(out, [("final", value, fit.iterations)]))
    else:
        cfg = JointConfig(
            params.get("lambda_t", 10.0), params.get("lambda_s", 10.0), params.get("lambda_l", 1.0),
            n_max=args.n_max, epsilon=args.epsilon, k_max=args.k_max,
        )
        res = estimate_joint(Z, phi, inp.omega, cfg, history=inp.history)
        R = res.r_hat
        iters = [0] + [i for it in res.inner_iterations for i in (it, 0)]
        files.append(write_matrix_csv(out / "l_hat.csv", res.l_hat, ids, ids))
        files.append(_write_trace(out, zip(res.trace_labels, res.objective_trace, iters)))
    files.insert(0, write_matrix_csv(out / "r_hat.csv", R, ids, dates))
    files.append(write_matrix_csv(out / "counts.csv", Z, ids, dates))
    return files


def _write_trace(out: Path, rows) -> Path:
    from .io import write_text_atomic

    lines = ["step,objective,inner_iterations"]
    lines += [f"{lab},{format(float(v), '.17g')},{int(k)}" for lab, v, k in rows]
    return write_text_atomic(out / "objective_trace.csv", "\n".join(lines) + "\n")


def cmd_learn_graph(args, manifest: RunManifest) -> list[Path]:
    R, ids, _ = read_matrix_csv(args.r_hat)
    manifest.add_input(args.r_hat)
    g = gram(R)
    L, warm = solve_laplacian_qp(g, args.lambda_s, args.lambda_l)
    out = Path(args.out_dir)
    from .io import write_json

    info = {
        "lambda_s": args.lambda_s,
        "lambda_l": args.lambda_l,
        "newton_iterations": warm.iterations,
        "qp_objective": laplacian_objective(L, g, args.lambda_s, args.lambda_l),
    }
    return [write_matrix_csv(out / "l_hat.csv", L, ids, ids), write_json(out / "qp_info.json", info)]


def cmd_benchmark(args, manifest: RunManifest) -> list[Path]:
    grids = load_grids(args.grid, smoke=args.smoke) if args.grid else default_grids(args.smoke)
    solver = BenchSolver(epsilon=args.epsilon, k_max=args.k_max, n_max=args.n_max)
    manifest.seed = args.seed

    def progress(seed, method, res):
        logger.info("seed %d %-12s mRSE x1e4 = %.4f at %s", seed, method, res.best_mrse * 1e4, res.best_params)

    report = run_benchmark(
        args.n_seeds, grids, None, solver, seed0=args.seed, n_jobs=args.jobs, progress=progress
    )
    files = report.write(args.out_dir)
    sys.stdout.write(report.to_table())
    return files


def cmd_plot_data(args, manifest: RunManifest) -> list[Path]:
    sources = []
    for p in map(Path, args.input):
        if p.is_dir():
            sources += [p / f"{s}.csv" for s in PLOT_SERIES if (p / f"{s}.csv").is_file()]
        else:
            sources.append(p)
    if not sources:
        raise CliError("no series found to export")
    records = []
    for src in sources:
        manifest.add_input(src)
        M, ids, cols = read_matrix_csv(src)
        records += [(ids[i], cols[t], M[i, t], src.stem) for i in range(len(ids)) for t in range(len(cols))]
    return [write_tidy_csv(Path(args.out_dir) / "plot_data.csv", records)]


# -- parser ------------------------------------------------------------------------


def _solver_flags(p, epsilon):
    p.add_argument("--epsilon", type=float, default=epsilon, help="inner primal-dual tolerance")
    p.add_argument("--k-max", type=int, default=None, help="inner primal-dual iteration cap")
    p.add_argument("--n-max", type=int, default=10, help="alternating rounds of the joint estimator")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jointrt", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"jointrt {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset with known R and L")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=int, default=300, help="number of days")
    p.add_argument("--territories", type=int, default=9)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--assignment", help="comma-separated 0-based cluster index per territory")
    p.add_argument("--z0", type=float, default=1000.0, help="initial daily count")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate reproduction numbers (and the graph)")
    p.add_argument("--input", required=True, help="dataset directory or CSSE time-series CSV")
    p.add_argument("--countries", nargs="+", default=list(SAMPLE_COUNTRIES))
    p.add_argument("--start", default=SAMPLE_START.isoformat())
    p.add_argument("--end", default=SAMPLE_END.isoformat())
    p.add_argument("--no-clip", action="store_true", help="keep negative daily increments")
    p.add_argument("--smooth", action="store_true", help="7-day centered average of daily counts")
    p.add_argument("--method", choices=CLI_METHODS, required=True)
    p.add_argument("--lambda-t", type=float)
    p.add_argument("--lambda-s", type=float)
    p.add_argument("--lambda-l", type=float)
    p.add_argument("--tau", type=int, help="EpiEstim window (odd, days)")
    p.add_argument("--graph", help="Laplacian CSV for fix-l (default: empty graph)")
    p.add_argument("--grid", help="JSON grid file; selects hyperparameters by mRSE on simulated data")
    _solver_flags(p, 1e-7)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("learn-graph", help="single Laplacian step for a fixed R")
    p.add_argument("--r-hat", required=True, help="reproduction-number CSV")
    p.add_argument("--input", help="ignored; accepted for symmetry with estimate")
    p.add_argument("--lambda-s", type=float, required=True)
    p.add_argument("--lambda-l", type=float, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_learn_graph)

    p = sub.add_parser("benchmark", help="grid-searched comparison of all estimators")
    p.add_argument("--n-seeds", type=int, default=20)
    p.add_argument("--seed", type=int, default=0, help="first dataset seed")
    p.add_argument("--grid", help="JSON file overriding the default grids per method")
    p.add_argument("--smoke", action="store_true", help="4x4x4 Joint grid")
    p.add_argument("--jobs", type=int, default=1)
    _solver_flags(p, BenchSolver.epsilon)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("plot-data", help="tidy long-format CSV of estimate outputs")
    p.add_argument("--input", nargs="+", required=True, help="output directories or matrix CSVs")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_plot_data)
    return ap


def _fail(command, exc, code) -> int:
    msg = {"command": command, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, (JointSolverError,)):
        msg["partial_trace"] = exc.trace
    sys.stderr.write(json.dumps(msg) + "\n")
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "k_max", "unset") is None:
        args.k_max = BenchSolver.k_max if args.command == "benchmark" else PdConfig.k_max
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = RunManifest(args.command, argv, config)
    try:
        files = args.func(args, manifest)
    except (ParameterError, IngestError, CliError, FileNotFoundError) as exc:
        return _fail(args.command, exc, EXIT_INPUT)
    except (QpError, FactorizationError, JointSolverError) as exc:
        return _fail(args.command, exc, EXIT_SOLVER)
    except Exception as exc:  # noqa: BLE001
        return _fail(args.command, exc, EXIT_INTERNAL)
    manifest.add_outputs(files, args.out_dir)
    manifest.write(args.out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
