"""Command line interface: ``cortkit {datagen|fit|simulate|evaluate|bench}``.

Exit codes: 0 on success, 2 on usage or input errors, 3 on numerical failure.
``CORTKIT_THREADS`` caps the number of worker threads.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from cortkit import datasets
from cortkit._rng import derive_rng, draw_seed
from cortkit._validation import check_pseudo_obs, parallel_map
from cortkit.baselines import CheckerboardCopula, EmpiricalBetaCopula, EmpiricalCopula
from cortkit.cort import Cort
from cortkit.forest import CopulaForest
from cortkit.io import load_model, save_model
from cortkit.metrics import boxplot_summary, burn_in, constraint_influence, cv_errors, eise, signed_log1p
from cortkit.qp import QpConvergenceError

logger = logging.getLogger("cortkit")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
MODEL_NAMES = ("empirical", "cb10", "cb5", "beta", "cort")


class UsageError(Exception):
    pass


# -- model factory -------------------------------------------------------------


def make_estimator(name: str, args) -> object:
    """Estimator for a model name: empirical, beta, cort, checkerboard, or cb<m>."""
    if name == "empirical":
        return EmpiricalCopula()
    if name == "beta":
        return EmpiricalBetaCopula()
    if name == "cort":
        return Cort(
            min_node_size=args.min_node_size,
            dim_reduction=args.dim_reduction,
            alpha=args.alpha,
            n_simulations=args.n_simulations,
            qp_tol=args.qp_tol,
            qp_max_iter=args.qp_max_iter,
        )
    if name == "checkerboard":
        return CheckerboardCopula(m=args.m, project=args.project, qp_tol=args.qp_tol)
    if name.startswith("cb") and name[2:].isdigit() and int(name[2:]) >= 1:
        return CheckerboardCopula(m=int(name[2:]), project=args.project, qp_tol=args.qp_tol)
    raise UsageError(f"unknown model {name!r}; use empirical, beta, cort, checkerboard or cb<m>")


def _seeded(est, seed):
    if "random_state" in est.get_params():
        est.set_params(random_state=seed)
    return est


def _model_list(text: str) -> list[str]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    if not names:
        raise UsageError("empty model list")
    return names


# -- output helpers ------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_rows(path, rows: list[dict], columns: list[str] | None = None) -> None:
    """CSV with a header; floats written with ``repr`` for an exact round trip."""
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c, "")) for c in columns])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def aligned(rows: list[dict], columns: list[str]) -> str:
    cells = [columns] + [[_short(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(row[k]) for row in cells) for k in range(len(columns))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells)


def _short(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.4g}"
    return str(value)


def _read_data(path) -> np.ndarray:
    try:
        data = datasets.read_csv(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise UsageError(f"malformed CSV {path}: {exc}") from exc
    try:
        return check_pseudo_obs(data)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc


# -- shared table builders -----------------------------------------------------


def dependence_rows(model_name: str, model, d: int) -> list[dict]:
    rows = []
    for i in range(d):
        for j in range(i + 1, d):
            tau, rho = model.pairwise_measures(i, j)
            rows.append({"model": model_name, "i": i + 1, "j": j + 1, "tau": tau, "rho": rho})
    return rows


def fit_forest_for(name: str, args, data, n_trees: int, seed: int) -> CopulaForest:
    return CopulaForest(make_estimator(name, args), n_estimators=n_trees, random_state=seed).fit(data)


def bagging_row(name: str, forest: CopulaForest) -> dict:
    stats = forest.oob_statistics()
    return {
        "model": name,
        **{k: getattr(stats, k) for k in ("J", "K", "M", "N")},
        "n_undefined": stats.n_undefined,
        "trees": forest.n_trees_,
        "nonzero_weights": int(np.sum(forest.omega_ > 1e-6)),
    }


DEP_COLUMNS = ["model", "i", "j", "tau", "rho"]
BAG_COLUMNS = ["model", "J", "K", "M", "N", "n_undefined", "trees", "nonzero_weights"]


# -- subcommands ---------------------------------------------------------------


def cmd_datagen(args) -> int:
    ds = datasets.generate(args.dataset, args.seed, args.n)
    if args.rank:
        ds = datasets.Dataset(datasets.pseudo_obs(ds.data), ds.generator, ds.seed)
    out = args.out or f"dataset{args.dataset}_seed{args.seed}.csv"
    ds.to_csv(out)
    print(f"wrote {ds.n} x {ds.d} sample to {out}")
    return EXIT_OK


def fit_report(model, data) -> dict:
    report = {"kind": getattr(model, "kind", type(model).__name__), "n": int(data.shape[0]), "d": int(data.shape[1])}
    if isinstance(model, CopulaForest):
        stats = model.oob_statistics()
        report.update(
            trees=model.n_trees_,
            dropped=list(model.dropped_),
            omega=model.omega_.tolist(),
            oob=stats.to_dict(),
            curve=model.statistics_curve(),
            eise=eise(model, data),
            tree_summary=[_tree_summary(e, w) for e, w in zip(model.estimators_, model.omega_)],
        )
        return report
    if hasattr(model, "n_leaves_"):
        report["leaves"] = int(model.n_leaves_)
    if hasattr(model, "frequencies_"):
        report["constraint_influence"] = constraint_influence(model)
    if hasattr(model, "is_copula"):
        check = model.is_copula(1e-8)
        report["is_copula"] = bool(check.ok)
        report["copula_gap"] = check.worst
    if hasattr(model, "qp_") and model.qp_ is not None:
        report["qp"] = {"status": model.qp_.status, "iterations": model.qp_.iterations,
                        "kkt_residual": model.qp_.kkt_residual, "feasibility": model.qp_.feasibility}
    report["norm_sq"] = float(model.l2_norm_sq())
    report["eise"] = eise(model, data)
    return report


def _tree_summary(est, weight) -> dict:
    row = {"weight": float(weight), "norm_sq": float(est.l2_norm_sq())}
    if hasattr(est, "frequencies_"):
        row["constraint_influence"] = constraint_influence(est)
    if hasattr(est, "n_leaves_"):
        row["leaves"] = int(est.n_leaves_)
    return row


def cmd_fit(args) -> int:
    data = _read_data(args.data)
    est = _seeded(make_estimator(args.model, args), args.seed)
    if args.forest:
        model = CopulaForest(est, n_estimators=args.forest, random_state=args.seed).fit(data)
    else:
        model = est.fit(data)
    save_model(model, args.out)
    report = fit_report(model, data)
    report_path = args.report or str(args.out) + ".report.json"
    Path(report_path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    keys = [k for k in ("kind", "leaves", "trees", "constraint_influence", "eise", "is_copula") if k in report]
    print("  ".join(f"{k}={_short(report[k])}" for k in keys))
    if "oob" in report:
        print("  ".join(f"{k}={_short(v)}" for k, v in report["oob"].items()))
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        model = load_model(args.model)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"cannot load model {args.model}: {exc}") from exc
    if args.n < 0:
        raise UsageError("--n must be non-negative")
    sample = model.sample(args.n, random_state=args.seed)
    datasets.write_csv(args.out, sample)
    print(f"wrote {sample.shape[0]} x {sample.shape[1]} draws to {args.out}")
    return EXIT_OK


def evaluate_tables(data, names, args, seed, n_trees):
    d = data.shape[1]
    dep, bag = [], []
    for k, name in enumerate(names):
        model = _seeded(make_estimator(name, args), draw_seed(derive_rng(seed, 0, k))).fit(data)
        dep.extend(dependence_rows(name, model, d))
        if n_trees:
            forest = fit_forest_for(name, args, data, n_trees, draw_seed(derive_rng(seed, 1, k)))
            bag.append(bagging_row(name, forest))
    return dep, bag


def cmd_evaluate(args) -> int:
    data = _read_data(args.data)
    names = _model_list(args.models)
    for name in names:
        make_estimator(name, args)
    dep, bag = evaluate_tables(data, names, args, args.seed, args.trees)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "dependence.csv", dep, DEP_COLUMNS)
    print(aligned(dep, DEP_COLUMNS))
    if bag:
        write_rows(out / "bagging.csv", bag, BAG_COLUMNS)
        print()
        print(aligned(bag, BAG_COLUMNS))
    return EXIT_OK


# -- bench ---------------------------------------------------------------------


def _bench_cells(dataset: int, names: list[str], args, seed: int, out: Path) -> list[str]:
    """All experiments on one dataset; returns the written file names."""
    ds = datasets.generate(dataset, draw_seed(derive_rng(seed, dataset)))
    data = ds.data
    tag = f"d{dataset}"
    files = []

    def emit(name, rows, columns=None):
        write_rows(out / name, rows, columns)
        files.append(name)

    datasets.write_csv(out / f"data_{tag}.csv", data)
    files.append(f"data_{tag}.csv")
    dep, bag = evaluate_tables(data, names, args, draw_seed(derive_rng(seed, dataset, 1)), args.trees)
    emit(f"dependence_{tag}.csv", dep, DEP_COLUMNS)
    emit(f"bagging_{tag}.csv", bag, BAG_COLUMNS)
    if "cort" in names and args.trees:
        forest = fit_forest_for("cort", args, data, args.trees, draw_seed(derive_rng(seed, dataset, 2)))
        emit(f"forest_curve_{tag}.csv", forest.statistics_curve(with_cdf=True))
        emit(f"forest_trees_{tag}.csv", [
            {"tree": j + 1, **_tree_summary(e, w)} for j, (e, w) in enumerate(zip(forest.estimators_, forest.omega_))
        ])
    cv_rows, box_rows = [], []
    for k, name in enumerate(names):
        rows = cv_errors(make_estimator(name, args), data, args.resamples, seed=draw_seed(derive_rng(seed, dataset, 3, k)))
        for r in rows:
            cv_rows.append({"model": name, **r, "P_log": float(signed_log1p(r["P"])), "Q_log": float(signed_log1p(r["Q"]))})
        for stat in ("P", "Q"):
            box_rows.append({"model": name, "statistic": stat, **boxplot_summary([r[stat] for r in rows])})
    emit(f"cv_{tag}.csv", cv_rows, ["model", "resample", "n_train", "n_test", "P", "Q", "P_log", "Q_log"])
    emit(f"cv_box_{tag}.csv", box_rows, ["model", "statistic", "min", "q1", "median", "q3", "max"])
    if "cort" in names:
        gen = datasets.GENERATORS[dataset]
        rows = burn_in(make_estimator("cort", args), lambda s, n: gen(s, n=n), args.burn_in_sizes,
                       draw_seed(derive_rng(seed, dataset, 4)))
        emit(f"burnin_{tag}.csv", rows, ["size", "source", "i", "j", "tau", "rho"])
    return files


def cmd_bench(args) -> int:
    names = _model_list(args.models)
    for name in names:
        make_estimator(name, args)
    if args.small:
        args.trees = 50 if args.trees is None else args.trees
    args.trees = 500 if args.trees is None else args.trees
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sets = [int(s) for s in args.dataset.split(",")] if args.dataset else [1, 2, 3, 4]
    for s in sets:
        if s not in datasets.GENERATORS:
            raise UsageError(f"unknown dataset {s}")

    def run(dataset):
        start = time.perf_counter()
        try:
            files = _bench_cells(dataset, names, args, args.seed, out)
            error = ""
        except Exception as exc:  # noqa: BLE001 - recorded in the failure manifest
            logger.exception("dataset %s failed", dataset)
            files, error = [], f"{type(exc).__name__}: {exc}"
        print(f"dataset {dataset}: {time.perf_counter() - start:.1f}s", file=sys.stderr)
        return dataset, files, error

    results = sorted(parallel_map(run, sets), key=lambda r: r[0])
    failures = [{"dataset": d, "error": e} for d, _, e in results if e]
    write_rows(out / "failures.csv", failures, ["dataset", "error"])
    config = {"seed": args.seed, "datasets": sets, "models": names, "trees": args.trees,
              "resamples": args.resamples, "burn_in_sizes": list(args.burn_in_sizes),
              "dim_reduction": args.dim_reduction, "alpha": args.alpha, "n_simulations": args.n_simulations,
              "min_node_size": args.min_node_size}
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    names_written = sorted(f for _, files, _ in results for f in files) + ["config.json", "failures.csv"]
    manifest = [{"file": f, "sha256": hashlib.sha256((out / f).read_bytes()).hexdigest()} for f in sorted(names_written)]
    write_rows(out / "manifest.csv", manifest, ["file", "sha256"])
    print(f"wrote {len(manifest)} files to {out} ({len(failures)} failed datasets)")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _sizes(text):
    try:
        values = [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from exc
    if values != sorted(values) or min(values) < 2:
        raise argparse.ArgumentTypeError("sizes must be ascending integers >= 2")
    return values


def _model_options(p):
    g = p.add_argument_group("model options")
    g.add_argument("--min-node-size", type=_positive_int, default=2)
    g.add_argument("--dim-reduction", action=argparse.BooleanOptionalAction, default=True,
                   help="per-leaf test choosing the splitting dimensions (default: on)")
    g.add_argument("--alpha", type=float, default=0.05, help="level of the dimension test")
    g.add_argument("--n-simulations", "-T", type=_positive_int, default=100,
                   help="Monte-Carlo replications of the dimension test")
    g.add_argument("--m", type=_positive_int, default=10, help="checkerboard resolution")
    g.add_argument("--project", action="store_true", help="project checkerboard weights onto copulas")
    g.add_argument("--qp-tol", type=float, default=1e-9)
    g.add_argument("--qp-max-iter", type=_positive_int, default=500)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cortkit", description="Copula recursive trees and baselines.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a benchmark dataset")
    p.add_argument("--dataset", type=int, choices=sorted(datasets.GENERATORS), required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=_positive_int, default=None, help="sample size (default: the dataset's)")
    p.add_argument("--rank", action="store_true", help="rank-transform the output")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("fit", help="fit a model to a CSV of pseudo-observations")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--report", default=None, help="report JSON (default: <out>.report.json)")
    p.add_argument("--model", default="cort", help="cort, checkerboard, cb<m>, beta or empirical")
    p.add_argument("--forest", type=_positive_int, default=None, metavar="N", help="bag N bootstrap fits")
    p.add_argument("--seed", type=int, required=True)
    _model_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="sample from a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="dependence and bagging tables for one dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--models", default=",".join(MODEL_NAMES))
    p.add_argument("--trees", type=int, default=50, help="trees per forest; 0 skips the bagging table")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    _model_options(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="run every experiment and write a results directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", default=None, help="comma-separated dataset ids (default: all)")
    p.add_argument("--models", default=",".join(MODEL_NAMES))
    p.add_argument("--small", action="store_true", help="50 trees per forest")
    p.add_argument("--trees", type=int, default=None, help="trees per forest (default 500, or 50 with --small)")
    p.add_argument("--resamples", type=_positive_int, default=20)
    p.add_argument("--burn-in-sizes", type=_sizes, default=[100, 200, 400, 800])
    _model_options(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cortkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QpConvergenceError as exc:
        sol = exc.solution
        print(f"cortkit {args.command}: numerical failure: {exc} (iterations {sol.iterations}, "
              f"KKT residual {sol.kkt_residual:.3g})", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"cortkit {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"cortkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
