"""``twolayer`` command-line interface.

Exit codes: 0 ok, 2 validation, 3 convergence, 4 IO.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, hypotest
from .core import PenaltyPair, block_covariance
from .em import EMError, EmSettings
from .evaluate import evaluate, roc_curve
from .files import (
    FileFormatError,
    ValidationError,
    config_hash,
    fit_meta,
    load_config,
    provenance,
    read_data,
    read_stack,
    staged_dir,
    staged_file,
    write_data,
    write_stack,
    write_table,
)
from .select import LambdaGrid, SelectionError, _fit_one, scaled_default_grid, select_lambda
from .simulate import ScenarioSpec, sample_panel

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4

logger = logging.getLogger("twolayer")


class ConvergenceFailure(RuntimeError):
    pass


def _scenario(d: dict, seed=None) -> ScenarioSpec:
    d = dict(d)
    if d.get("alphas") is not None:
        d["alphas"] = tuple(d["alphas"])
    if seed is not None:
        d["seed"] = seed
    try:
        return ScenarioSpec(**d)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"scenario: {exc}") from exc


def _em_settings(args) -> EmSettings:
    try:
        return EmSettings(delta=args.delta, max_iterations=args.max_iter)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def _emit(rows, out, fmt):
    if out is None:
        if fmt == "json":
            print(json.dumps(rows, indent=2))
        else:
            import csv

            fields = list(dict.fromkeys(k for r in rows for k in r))
            w = csv.DictWriter(sys.stdout, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        return
    with staged_file(out) as tmp:
        write_table(tmp, rows, fmt)


def _map(func, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(func, items))
    return [func(x) for x in items]


# ---------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    cfg, _ = load_config(args.config, "simulate")
    spec = _scenario(cfg["scenario"], args.seed)
    effective = {**cfg, "scenario": {**cfg["scenario"], "seed": spec.seed}}
    prov = provenance(spec.seed, config_hash(effective))
    data, truth = sample_panel(spec)
    with staged_dir(args.out) as tmp:
        write_data(tmp, data, prov)
        write_stack(tmp / "truth", truth, {"kind": "truth", "scenario": effective["scenario"], **prov})
    print(f"wrote {data.n} x {data.k_categories * data.p} data and truth stack to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- fit / select

def _penalties(args) -> PenaltyPair | None:
    if args.lam is not None:
        if args.lambda1 is not None or args.lambda2 is not None:
            raise ValidationError("use either --lambda or --lambda1/--lambda2")
        return PenaltyPair(args.lam, args.lam)
    if args.lambda1 is None and args.lambda2 is None:
        return None
    if args.lambda1 is None or args.lambda2 is None:
        raise ValidationError("--lambda1 and --lambda2 must be given together")
    return PenaltyPair(args.lambda1, args.lambda2)


def _run_fit(args, criterion):
    data, meta = read_data(args.data)
    init = read_stack(args.init)[0] if getattr(args, "init", None) else None
    settings = _em_settings(args)
    pen = None if criterion else _penalties(args)
    if criterion is None and pen is None:
        raise ValidationError("give --lambda, --lambda1/--lambda2 or --criterion")
    cfg = {
        "command": "fit", "data_hash": meta.get("config_hash"), "method": args.method,
        "penalties": None if pen is None else [pen.lambda1, pen.lambda2],
        "criterion": criterion, "gamma": args.gamma, "folds": args.folds,
        "grid_size": args.grid_size, "grid_span": args.grid_span,
        "delta": args.delta, "max_iter": args.max_iter, "seed": args.seed,
    }
    prov = provenance(args.seed, config_hash(cfg))
    extra, score_rows = {}, None
    try:
        if criterion:
            grid = scaled_default_grid(data, args.grid_size, args.grid_span)
            rep = select_lambda(
                data, grid, criterion, args.method, settings, args.gamma, args.folds, args.seed,
                keep_fits=False, jobs=args.jobs,
            )
            fit = rep.chosen_fit
            extra = {"criterion": rep.criterion, "failed_grid_points": len(rep.failures)}
            score_rows = [
                {"lambda1": k.lambda1, "lambda2": k.lambda2, "score": v,
                 "chosen": k == rep.chosen, **prov}
                for k, v in rep.scores.items()
            ]
        else:
            fit = _fit_one(args.method, data, pen, settings, init=init, cov=block_covariance(data))
    except EMError as exc:
        with staged_dir(args.out) as tmp:
            trace = [] if exc.trace is None else [float(v) for v in exc.trace]
            (tmp / "manifest.json").write_text(json.dumps(
                {"error": str(exc), "iteration": exc.iteration, "objective_trace": trace, **prov},
                indent=2, sort_keys=True,
            ) + "\n")
        raise
    with staged_dir(args.out) as tmp:
        write_stack(tmp, fit.estimate, fit_meta(fit, prov, extra))
        if score_rows is not None:
            write_table(tmp / f"scores.{args.format}", score_rows, args.format)
    p = fit.penalties
    print(
        f"{fit.method}: lambda=({p.lambda1:.4g}, {p.lambda2:.4g}) iterations={fit.iterations} "
        f"time={fit.wall_time_seconds:.2f}s edges={fit.edge_count} converged={fit.converged}"
    )
    if not fit.converged:
        raise ConvergenceFailure(f"{fit.method} did not converge; outputs and trace written")
    return EXIT_OK


def cmd_fit(args) -> int:
    return _run_fit(args, args.criterion)


def cmd_select(args) -> int:
    return _run_fit(args, args.criterion)


# ---------------------------------------------------------------- evaluate

def cmd_evaluate(args) -> int:
    truth, tmeta = read_stack(args.truth)
    est, emeta = read_stack(args.estimate)
    try:
        m = evaluate(truth, est)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    chash = config_hash({"truth": tmeta.get("config_hash"), "estimate": emeta.get("config_hash")})
    row = {
        "scenario": args.scenario, "method": emeta.get("method", "unknown"),
        "criterion": emeta.get("criterion", "fixed"), "replicate": args.replicate,
        **m.as_row(), **provenance(emeta.get("seed"), chash),
    }
    _emit([row], args.out, args.format)
    return EXIT_OK


# ---------------------------------------------------------------- roc

def _roc_job(job):
    spec, methods, grid, settings = job
    data, truth = sample_panel(spec)
    out = []
    for method in methods:
        curve = roc_curve(data, truth, method, grid, settings)
        out.append((method, curve))
    return out


def cmd_roc(args) -> int:
    cfg, _ = load_config(args.config, "roc")
    seed = cfg.get("seed", 0) if args.seed is None else args.seed
    archs = cfg.get("architectures", ["I", "II"])
    rhos = cfg.get("rhos", [0, 1])
    methods = cfg.get("methods", ["onestep", "em"])
    reps = cfg.get("replicates", 20)
    lo, hi, size = cfg.get("lambda_min", 0.01), cfg.get("lambda_max", 1.0), cfg.get("grid_size", 15)
    if not 0 < lo < hi or size < 2:
        raise ValidationError("need 0 < lambda_min < lambda_max and grid_size >= 2")
    grid = LambdaGrid(tuple(np.geomspace(lo, hi, size)), tie_to_equal=True)
    settings = _em_settings(args)
    prov = provenance(seed, config_hash({**cfg, "seed": seed}))
    jobs, labels = [], []
    for arch in archs:
        for rho in rhos:
            for r in range(reps):
                spec = _scenario({**cfg["scenario"], "architecture": arch, "rho": rho}, seed + r)
                jobs.append((spec, methods, grid, settings))
                labels.append((f"{arch}/rho={rho}", r))
    points, aucs = [], []
    for (scen, r), result in zip(labels, _map(_roc_job, jobs, args.jobs)):
        for method, curve in result:
            for (f, t), lam in zip(curve.points, curve.lambdas):
                points.append({"scenario": scen, "method": method, "replicate": r,
                               "lambda": lam, "fpr": f, "tpr": t, **prov})
            aucs.append({"scenario": scen, "method": method, "criterion": "roc", "replicate": r,
                         "auc": curve.auc, "skipped": curve.skipped, **prov})
    out = Path(args.out)
    with staged_dir(out.parent if str(out.parent) else Path(".")) as tmp:
        write_table(tmp / out.name, points, args.format)
        write_table(tmp / f"{out.stem}_auc{out.suffix or '.' + args.format}", aucs, args.format)
    for scen in dict.fromkeys(s for s, _ in labels):
        means = {m: np.mean([a["auc"] for a in aucs if a["scenario"] == scen and a["method"] == m])
                 for m in methods}
        print(scen, " ".join(f"{m}={v:.4f}" for m, v in means.items()))
    return EXIT_OK


# ---------------------------------------------------------------- test

def cmd_test(args) -> int:
    data, meta = read_data(args.data)
    func = hypotest.test_sigma0_zero if args.test == "sigma0" else hypotest.test_equal_cross_blocks
    try:
        res = func(data, args.n_resample, seed=args.seed, norm=args.norm, jobs=args.jobs)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    cfg = {"command": "test", "data_hash": meta.get("config_hash"), "test": args.test,
           "n_resample": args.n_resample, "norm": args.norm, "seed": args.seed}
    report = {**res.as_dict(), **provenance(args.seed, config_hash(cfg))}
    if args.format == "json":
        text = json.dumps(report, indent=2, sort_keys=True) + "\n"
        if args.out is None:
            sys.stdout.write(text)
        else:
            with staged_file(args.out) as tmp:
                tmp.write_text(text)
    else:
        report["flags"] = ";".join(report["flags"])
        _emit([report], args.out, "csv")
    return EXIT_OK


# ---------------------------------------------------------------- repro-table1

def _table1_job(job):
    spec, methods, criteria, size, span, gamma, folds, settings = job
    data, truth = sample_panel(spec)
    grid = scaled_default_grid(data, size, span)
    rows = []
    for method in methods:
        for crit in criteria:
            rep = select_lambda(data, grid, crit, method, settings, gamma, folds, spec.seed,
                                keep_fits=False)
            fit = rep.chosen_fit
            m = evaluate(truth, fit.estimate)
            rows.append({"method": method, "criterion": crit, "lambda1": rep.chosen.lambda1,
                         "lambda2": rep.chosen.lambda2, "edges": fit.edge_count,
                         "iterations": fit.iterations, **m.as_row()})
    return rows


def cmd_repro_table1(args) -> int:
    cfg, _ = load_config(args.config, "repro-table1")
    seed = cfg.get("seed", 0) if args.seed is None else args.seed
    gamma = cfg.get("gamma", 0.1) if args.gamma is None else args.gamma
    folds = cfg.get("folds", 5) if args.folds is None else args.folds
    methods = cfg.get("methods", ["onestep", "em"])
    criteria = cfg.get("criteria", ["ebic", "cv"])
    reps = cfg.get("replicates", 20)
    settings = _em_settings(args)
    prov = provenance(seed, config_hash({**cfg, "seed": seed, "gamma": gamma, "folds": folds}))
    specs = [_scenario(cfg["scenario"], seed + r) for r in range(reps)]
    jobs = [(s, methods, criteria, cfg.get("grid_size", 5), cfg.get("grid_span", 4.0), gamma,
             folds, settings) for s in specs]
    scen = f"{specs[0].architecture}/rho={specs[0].rho}/p={specs[0].p}"
    rows = []
    for r, result in enumerate(_map(_table1_job, jobs, args.jobs)):
        for row in result:
            rows.append({"scenario": scen, "replicate": r, **row, **prov})
    _emit(rows, args.out, args.format)
    for method in methods:
        for crit in criteria:
            sel = [x for x in rows if x["method"] == method and x["criterion"] == crit]
            means = {k: np.mean([x[k] for x in sel]) for k in ("EL", "FL", "FP", "FN", "HD")}
            print(f"{method:8s} {crit:5s} " + " ".join(f"{k}={v:.3f}" for k, v in means.items()),
                  file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twolayer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"twolayer {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    seed = argparse.ArgumentParser(add_help=False)
    seed.add_argument("--seed", type=int, default=None)
    jobs = argparse.ArgumentParser(add_help=False)
    jobs.add_argument("--jobs", type=int, default=1)
    em = argparse.ArgumentParser(add_help=False)
    em.add_argument("--delta", type=float, default=None, help="EM stopping threshold (default 1e-4*p)")
    em.add_argument("--max-iter", type=int, default=100)
    fmt = argparse.ArgumentParser(add_help=False)
    fmt.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("simulate", parents=[seed], help="simulate a scenario")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    for name, func in (("fit", cmd_fit), ("select", cmd_select)):
        p = sub.add_parser(name, parents=[seed, jobs, em, fmt], help=f"{name} a two-layer model")
        p.add_argument("data", help="data CSV (manifest next to it)")
        p.add_argument("--method", choices=("onestep", "em", "alpha-em"), default="em")
        p.add_argument("--criterion", choices=("ebic", "cv"), default=None if name == "fit" else "ebic")
        p.add_argument("--gamma", type=float, default=0.1)
        p.add_argument("--folds", type=int, default=5)
        p.add_argument("--grid-size", type=int, default=10)
        p.add_argument("--grid-span", type=float, default=4.0)
        p.add_argument("--out", required=True)
        if name == "fit":
            p.add_argument("--lambda", dest="lam", type=float, default=None)
            p.add_argument("--lambda1", type=float, default=None)
            p.add_argument("--lambda2", type=float, default=None)
            p.add_argument("--init", default=None, help="estimate directory to start EM from")
        p.set_defaults(func=func, lam=None, lambda1=None, lambda2=None, init=None)

    p = sub.add_parser("evaluate", parents=[fmt], help="score an estimate against truth")
    p.add_argument("truth")
    p.add_argument("estimate")
    p.add_argument("--out", default=None)
    p.add_argument("--scenario", default="")
    p.add_argument("--replicate", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("roc", parents=[seed, jobs, em, fmt], help="ROC curves over a tied grid")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("test", parents=[seed, jobs], help="resampling tests of layer structure")
    p.add_argument("data")
    p.add_argument("--test", choices=("sigma0", "equal-blocks"), required=True)
    p.add_argument("--n-resample", type=int, default=199)
    p.add_argument("--norm", choices=hypotest.NORMS, default="fro")
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("repro-table1", parents=[seed, jobs, em, fmt], help="replicated selection study")
    p.add_argument("config")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_repro_table1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is None and args.command in ("fit", "select", "test"):
        args.seed = 0
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except FileFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EMError, SelectionError, ConvergenceFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
