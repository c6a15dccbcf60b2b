"""Command-line front end: ``scramble {fit,tune,diagnose,simulate,transform}``.

Exit codes: 0 success, 2 user or input error, 3 numerical failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .core import Center, FitConfig, FitResult, fit, transform
from .diagnostics import distance_table, residual_cell_map
from .io import CsvError, format_number, read_matrix, write_matrix, write_rows
from .loss import LossSpec, PenaltySpec
from .simulation import CSV_COLUMNS, SVD, Method, SimScenario, run_study, summarize
from .stiefel import DivergenceError, OptimizerConfig, RetractionError
from .tuning import (
    LOG_COLUMNS,
    BayesOptConfig,
    TuningError,
    bayes_opt_tune,
    grid_tune,
    log_rows,
)

LOSSES = ("square", "huber", "pseudohuber", "tukey", "lts")
INITS = ("rank", "wrap")


class UsageError(Exception):
    pass


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SCRAMBLE_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"SCRAMBLE_SEED is not an integer: {env!r}") from None


def _floats(text, name):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{name}: expected comma-separated numbers, got {text!r}") from None


def _add_fit_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--k", type=int, default=2, help="number of components")
    g.add_argument("--loss", choices=LOSSES, default="huber")
    g.add_argument("--init", choices=INITS, default="wrap")
    g.add_argument("--lambda", dest="lam", default="0", help="sparsity parameter, one value or one per component")
    g.add_argument("--alpha", type=float, default=0.0, help="elastic-net mixing parameter")
    g.add_argument("--lr", type=float, default=0.001)
    g.add_argument("--decay", type=float, default=0.99)
    g.add_argument("--max-iters", type=int, default=1000)
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--batch-size", type=int, default=None)
    g.add_argument("--threshold-window", type=int, default=10)
    g.add_argument("--no-center", action="store_true", help="data are already centered")
    g.add_argument("--no-threshold", action="store_true", help="skip loadings thresholding")


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="random seed (fallback: $SCRAMBLE_SEED, then 0)")
    p.add_argument("--out-dir", default=".", help="directory for output files")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _fit_config(args, seed):
    lam = _floats(args.lam, "lambda")
    if len(lam) not in (1, args.k):
        raise UsageError(f"--lambda needs 1 or {args.k} values")
    try:
        return FitConfig(
            k=args.k,
            loss=LossSpec(family=args.loss),
            penalty=PenaltySpec(tuple(lam) * (args.k if len(lam) == 1 else 1), args.alpha),
            init=args.init,
            optimizer=OptimizerConfig(
                learning_rate=args.lr, decay=args.decay, max_iters=args.max_iters, tol=args.tol,
                batch_size=args.batch_size, seed=seed,
            ),
            threshold_window=args.threshold_window,
            center=Center.NONE if args.no_center else Center.MEDIAN,
            thresholding=not args.no_threshold,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _read(path):
    X, _ = read_matrix(path)
    return X


def _out_dir(args):
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_manifest(out, command, config, outputs, warnings=()):
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "outputs": sorted(outputs),
        "warnings": list(warnings),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _component_header(k):
    return [f"PC{c + 1}" for c in range(k)]


def _write_fit(out, result, prefix=""):
    (out / f"{prefix}fit.json").write_text(result.to_json() + "\n")
    header = _component_header(result.k)
    write_matrix(out / f"{prefix}loadings.csv", result.loadings, header)
    write_matrix(out / f"{prefix}scores.csv", result.scores, header)
    return [f"{prefix}fit.json", f"{prefix}loadings.csv", f"{prefix}scores.csv"]


def _fit_warnings(result):
    if result.trace.reason == "max_iters":
        return [f"optimizer stopped at max_iters={result.trace.n_iter} without meeting the tolerance"]
    return []


def _check_data(X, path):
    if X.size == 0:
        raise UsageError(f"{path}: no data rows")


def cmd_fit(args):
    seed = _seed(args)
    cfg = _fit_config(args, seed)
    X = _read(args.input)
    _check_data(X, args.input)
    try:
        result = fit(X, cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    files = _write_fit(out, result)
    config = {"input": str(args.input), "seed": seed, "fit": cfg.to_dict()}
    _write_manifest(out, "fit", config, files, _fit_warnings(result))
    return 0


def cmd_tune(args):
    seed = _seed(args)
    cfg = _fit_config(args, seed)
    X = _read(args.input)
    _check_data(X, args.input)
    tpo_alpha = args.tpo_alpha if args.tpo_alpha is not None else cfg.penalty.alpha
    config = {"input": str(args.input), "seed": seed, "fit": cfg.to_dict(), "tpo_alpha": tpo_alpha}
    try:
        if args.grid:
            grid = _floats(args.grid, "grid")
            config["grid"] = grid
            outcome = grid_tune(X, cfg, grid, tpo_alpha=tpo_alpha)
        else:
            box = _floats(args.box, "box")
            if len(box) != 2:
                raise UsageError("--box needs two values lo,hi")
            bo = BayesOptConfig(budget=args.budget, n_init=args.n_init, search_box=(tuple(box),),
                                seed=seed, per_component=args.per_component)
            config["bayes_opt"] = asdict(bo)
            outcome = bayes_opt_tune(X, cfg, bo, tpo_alpha=tpo_alpha)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    write_rows(out / "tune.csv", LOG_COLUMNS, log_rows(outcome.log, timing=args.timing))
    files = ["tune.csv"] + _write_fit(out, outcome.result, prefix="best_")
    config["best_lambda"] = [float(v) for v in outcome.best_lambda]
    config["best_tpo"] = outcome.score.value
    _write_manifest(out, "tune", config, files, _fit_warnings(outcome.result))
    return 0


def _load_fit(path):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"{path}: no such file")
    try:
        return FitResult.from_json(path.read_text())
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"{path}: not a fit result ({exc})") from None


def cmd_diagnose(args):
    result = _load_fit(args.fit)
    X = _read(args.input)
    p = result.loadings.shape[0]
    if X.ndim != 2 or X.shape[1] != p:
        raise UsageError(f"{args.input}: expected {p} columns, found {X.shape[1] if X.ndim == 2 else 0}")
    try:
        sd, od, flags, (sd_cut, od_cut) = distance_table(result, X, args.quantile)
        cells = residual_cell_map(result, X)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    rows = [[i + 1, format_number(s), format_number(o), f.value] for i, (s, o, f) in enumerate(zip(sd, od, flags))]
    write_rows(out / "distances.csv", ("row", "sd", "od", "flag"), rows)
    write_matrix(out / "residual_map.csv", cells, [f"V{j + 1}" for j in range(p)])
    config = {"fit": str(args.fit), "input": str(args.input), "quantile": args.quantile,
              "sd_cutoff": sd_cut, "od_cutoff": od_cut}
    _write_manifest(out, "diagnose", config, ["distances.csv", "residual_map.csv"])
    return 0


def cmd_transform(args):
    result = _load_fit(args.fit)
    X = _read(args.input)
    p = result.loadings.shape[0]
    if X.size == 0:
        Z = np.zeros((0, result.k))
    else:
        if X.shape[1] != p:
            raise UsageError(f"{args.input}: expected {p} columns, found {X.shape[1]}")
        Z = transform(result, X)
    out = _out_dir(args)
    write_matrix(out / "scores.csv", Z, _component_header(result.k))
    _write_manifest(out, "transform", {"fit": str(args.fit), "input": str(args.input)}, ["scores.csv"])
    return 0


PRESET_SETTINGS = {
    "lowdim-clean": ("lowdim", "none"),
    "lowdim-casewise": ("lowdim", "casewise"),
    "lowdim-cellwise": ("lowdim", "cellwise"),
    "highdim-clean": ("highdim", "none"),
    "highdim-casewise": ("highdim", "casewise"),
    "highdim-cellwise": ("highdim", "cellwise"),
}

_SCENARIO_KEYS = {"setting", "contamination", "epsilon", "gamma_cell"}
_METHOD_KEYS = {"name", "kind", "loss", "init", "lambda", "alpha"}
_CONFIG_KEYS = {"scenarios", "methods", "replicates", "seed", "k"}


def default_methods(lam=0.0, alpha=0.0):
    methods = [SVD]
    for loss in ("huber", "tukey", "lts"):
        for init in INITS:
            methods.append(Method(f"scramble-{loss}-{init}", loss=loss, init=init, lam=lam, alpha=alpha))
    return methods


def parse_study_config(cfg):
    """Validate a study description; raises UsageError naming offending keys."""
    if not isinstance(cfg, dict):
        raise UsageError("study config must be a JSON object")
    bad = sorted(set(cfg) - _CONFIG_KEYS)
    if "scenarios" not in cfg:
        bad.append("scenarios (missing)")
    scenarios, methods = [], []
    for i, s in enumerate(cfg.get("scenarios", [])):
        extra = sorted(set(s) - _SCENARIO_KEYS)
        bad += [f"scenarios[{i}].{key}" for key in extra]
        if not extra:
            try:
                scenarios.append(SimScenario(**s))
            except (ValueError, TypeError) as exc:
                bad.append(f"scenarios[{i}] ({exc})")
    for i, m in enumerate(cfg.get("methods", [])):
        extra = sorted(set(m) - _METHOD_KEYS)
        bad += [f"methods[{i}].{key}" for key in extra]
        if extra:
            continue
        m = dict(m)
        if "lambda" in m:
            m["lam"] = m.pop("lambda")
        try:
            methods.append(Method(**m))
        except (ValueError, TypeError) as exc:
            bad.append(f"methods[{i}] ({exc})")
    for key in ("replicates", "seed", "k"):
        if key in cfg and not isinstance(cfg[key], int):
            bad.append(f"{key} (not an integer)")
    if bad:
        raise UsageError("invalid study config: " + ", ".join(bad))
    return scenarios, methods or default_methods(), cfg.get("replicates", 20), cfg.get("seed"), cfg.get("k", 2)


def cmd_simulate(args):
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"{path}: no such file")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        scenarios, methods, reps, cfg_seed, k = parse_study_config(raw)
        seed = args.seed if args.seed is not None else cfg_seed if cfg_seed is not None else _seed(args)
        if args.reps is not None:
            reps = args.reps
    elif args.preset:
        setting, cont = PRESET_SETTINGS[args.preset]
        eps = _floats(args.eps, "eps") if args.eps else ([0.0] if cont == "none" else [0.1])
        try:
            scenarios = [SimScenario(setting, cont, e) for e in eps]
            lam = float(args.lam)
            methods = default_methods(lam, args.alpha)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        reps = args.reps if args.reps is not None else 20
        seed, k = _seed(args), 2
    else:
        raise UsageError("simulate needs a config file or --preset")
    if reps < 1:
        raise UsageError("--reps must be at least 1")
    rows = run_study(scenarios, methods, reps, master_seed=seed, jobs=args.jobs, k=k)
    out = _out_dir(args)

    def fmt(r, key):
        v = r[key]
        if key == "seconds" and not args.timing:
            return "0"
        return format_number(v) if isinstance(v, float) else str(v)

    write_rows(out / "results.csv", CSV_COLUMNS, [[fmt(r, c) for c in CSV_COLUMNS] for r in rows])
    summary = summarize(rows)
    cols = ("scenario", "epsilon", "method", "n", "failures", "angle", "tpr", "tnr")
    write_rows(out / "summary.csv", cols, [[fmt(r, c) for c in cols] for r in summary])
    config = {
        "seed": seed, "replicates": reps, "k": k,
        "scenarios": [{**asdict(s), "setting": s.setting.value, "contamination": s.contamination.value}
                      for s in scenarios],
        "methods": [{"name": m.name, "kind": m.kind, "loss": m.loss.value, "init": m.init.value,
                     "lambda": m.lam, "alpha": m.alpha} for m in methods],
    }
    failures = sum(1 for r in rows if r["error"])
    warnings = [f"{failures} fits failed; see the error column"] if failures else []
    _write_manifest(out, "simulate", config, ["results.csv", "summary.csv"], warnings)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="scramble", description="Sparse cellwise robust PCA.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to a CSV data matrix")
    p.add_argument("input")
    _add_fit_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("tune", help="choose lambda by the tradeoff-product score")
    p.add_argument("input")
    _add_fit_flags(p)
    _add_common(p)
    p.add_argument("--budget", type=int, default=30)
    p.add_argument("--n-init", type=int, default=8)
    p.add_argument("--box", default="-4,1", help="search range of log10(lambda)")
    p.add_argument("--per-component", action="store_true", help="one lambda per component")
    p.add_argument("--grid", default=None, help="comma-separated lambdas; replaces Bayesian optimization")
    p.add_argument("--tpo-alpha", type=float, default=None, help="sparsity weight in the score (default: --alpha)")
    p.add_argument("--timing", action="store_true", help="record wall-clock seconds in tune.csv")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("diagnose", help="score/orthogonal distances and residual cell map")
    p.add_argument("fit")
    p.add_argument("input")
    p.add_argument("--quantile", type=float, default=0.975)
    _add_common(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("simulate", help="run a simulation study")
    p.add_argument("config", nargs="?", default=None, help="JSON study description")
    p.add_argument("--preset", choices=sorted(PRESET_SETTINGS))
    p.add_argument("--eps", default=None, help="comma-separated contamination levels")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--lambda", dest="lam", default="0")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="record wall-clock seconds in results.csv")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("transform", help="scores of new observations")
    p.add_argument("fit")
    p.add_argument("input")
    _add_common(p)
    p.set_defaults(func=cmd_transform)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, CsvError) as exc:
        print(f"scramble {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, RetractionError, TuningError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"scramble {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
