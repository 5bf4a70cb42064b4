"""Command-line entry point.

Subcommands: fit, predict, pite, permtest, simulate, benchmark.  Failures
print one machine-readable line ``hobzbart-error <CODE> <exit>`` followed by
a human-readable message on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import MODELS, run_benchmark
from .errors import DataIOError, HobzError, NumericError, ValidationError
from .forest import Hyperparams
from .inference import (
    FULL,
    METRIC_KINDS,
    compute_metrics,
    compute_pite,
    expected_outcome,
    expected_partial_outcome,
    fit_linear_hobz,
    permutation_test,
    predict_draws,
)
from .io import config_hash, ingest_csv, read_csv_table, read_draws, write_csv, write_dataset_csv, write_draws
from .sampler import Schedule, run_chain
from .simgen import generate_train_test, get_preset, scenario_presets


_PATH_ARGS = frozenset({"func", "data", "test", "out", "summary", "draws", "samples", "metrics", "truth",
                        "observed", "treated", "control", "plot_data"})


def _provenance(args, command: str) -> dict:
    # file locations are left out so that relocated reruns hash identically
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in _PATH_ARGS}
    return {"command": command, "seed": args.seed, "config_hash": config_hash(cfg), "version": __version__}


def _comments(prov: dict) -> list[str]:
    return [f"hobzbart {prov['version']} {prov['command']} seed={prov['seed']} config={prov['config_hash']}"]


def _write_json(path, obj) -> None:
    try:
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _ensure_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create directory {p}: {exc.strerror or exc}") from exc
    return p


def _hyperparams(args) -> Hyperparams:
    return Hyperparams(num_trees=args.trees, alpha_g=args.alpha_g, beta_g=args.beta_g,
                       alpha_kappa=args.alpha_kappa, beta_kappa=args.beta_kappa,
                       min_leaf_size=args.min_leaf_size)


def _schedule(args) -> Schedule:
    return Schedule(args.iterations, args.burn_in, args.thin, args.seed)


def _batch_means_ess(x: np.ndarray, batches: int = 20) -> float:
    n = x.size
    if n < 2 * batches or np.var(x) == 0.0:
        return float(n)
    b = n // batches
    means = x[: b * batches].reshape(batches, b).mean(axis=1)
    vm = np.var(means, ddof=1)
    if vm == 0.0:
        return float(n)
    return float(min(n, n * np.var(x, ddof=1) / (b * vm)))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_fit(args) -> int:
    data = ingest_csv(args.data, args.response, exclude=args.exclude)
    test_X = None
    if args.test:
        test = ingest_csv(args.test, args.response, exclude=args.exclude)
        test_X = test.X
    h, sched = _hyperparams(args), _schedule(args)
    if args.model == "linear":
        draws = fit_linear_hobz(data, sched, test_X, h)
    else:
        draws = run_chain(data, test_X, h, sched)
    prov = _provenance(args, "fit")
    write_draws(args.out, draws, {"provenance": prov})
    k = draws.kappa
    summary = {
        "provenance": prov,
        "n_draws": draws.n_draws,
        "kappa_mean": float(k.mean()) if k.size else None,
        "kappa_sd": float(k.std(ddof=1)) if k.size > 1 else None,
        "kappa_ess": _batch_means_ess(k) if k.size else None,
        "meta": draws.meta,
    }
    _write_json(args.summary or f"{args.out}.summary.json", summary)
    print(f"wrote {draws.n_draws} draws to {args.out}")
    return 0


def _read_truth_column(path, column) -> np.ndarray:
    header, rows = read_csv_table(path)
    if column not in header:
        raise ValidationError(f"{path}: column {column!r} not found")
    j = header.index(column)
    return np.array([float(r[j]) for r in rows])


def cmd_predict(args) -> int:
    draws, _ = read_draws(args.draws)
    if draws.n_draws == 0:
        raise ValidationError("draw file holds no draws")
    f1, f0, fb = draws.block(args.split)
    full = expected_outcome(f1, f0, fb).mean(axis=0)
    partial = expected_partial_outcome(f0, fb).mean(axis=0)
    prov = _provenance(args, "predict")
    write_csv(args.out, ["id", "expected_outcome", "expected_partial_outcome"],
              [[i, float(a), float(b)] for i, (a, b) in enumerate(zip(full, partial))], _comments(prov))
    if args.samples:
        rng = np.random.default_rng(args.seed)
        pd = predict_draws(draws, rng, args.split)
        rows = [[l, i, int(pd.category[l, i]), float(pd.value[l, i])]
                for l in range(pd.value.shape[0]) for i in range(pd.value.shape[1])]
        write_csv(args.samples, ["draw", "id", "category", "value"], rows, _comments(prov))
    if args.metrics:
        if args.truth:
            target = _read_truth_column(args.truth, args.truth_column)
            against = f"{Path(args.truth).name}:{args.truth_column}"
        elif args.observed:
            target = ingest_csv(args.observed, args.response, exclude=args.exclude).y
            against = f"{Path(args.observed).name}:{args.response}"
        else:
            raise ValidationError("--metrics needs --truth or --observed")
        m = compute_metrics(full, target)
        _write_json(args.metrics, {"provenance": prov, "against": against, "mae": m.mae, "mse": m.mse,
                                   "rmse": m.rmse, "adj_r2": m.adj_r2, "degenerate": m.degenerate})
        print(f"MAE {m.mae:.6f} RMSE {m.rmse:.6f} adjR2 {m.adj_r2:.6f}")
    return 0


def cmd_pite(args) -> int:
    dt, _ = read_draws(args.treated)
    dc, _ = read_draws(args.control)
    res = compute_pite(dt, dc, args.metric, args.level, args.split)
    prov = _provenance(args, "pite")
    rows = [[i, float(p), float(lo), float(hi), res.metric]
            for i, (p, lo, hi) in enumerate(zip(res.point, res.lower, res.upper))]
    write_csv(args.out, ["id", "point", "lower", "upper", "metric"], rows,
              _comments(prov) + [f"ATE {res.ate!r} level {res.level!r}"])
    if args.plot_data:
        order = np.argsort(res.point, kind="stable")
        write_csv(args.plot_data, ["rank", "id", "point", "lower", "upper"],
                  [[r, int(i), float(res.point[i]), float(res.lower[i]), float(res.upper[i])]
                   for r, i in enumerate(order)], _comments(prov))
    print(f"ATE {res.ate:.6f}")
    return 0


def cmd_permtest(args) -> int:
    data = ingest_csv(args.data, args.response, arm=args.arm_column, exclude=args.exclude)
    res = permutation_test(data, _hyperparams(args), _schedule(args), args.metric, args.n_perm,
                           args.level, args.workers)
    out = {
        "provenance": _provenance(args, "permtest"),
        "metric": res.metric,
        "observed_pite_sd": res.observed_pite_sd,
        "permuted_pite_sds": [float(v) for v in res.permuted_pite_sds],
        "p_value": res.p_value,
        "raw_fraction": res.raw_fraction,
        "n_perm": res.n_perm,
    }
    _write_json(args.out, out)
    print(f"p {res.p_value:.6f}")
    return 0


def cmd_simulate(args) -> int:
    cfg = get_preset(args.preset, args.seed)
    if args.two_arm:
        cfg = replace(cfg, two_arm=True, arm_shift=tuple(args.arm_shift))
    if args.n is not None:
        cfg = replace(cfg, n=args.n)
    if args.n_test is not None:
        cfg = replace(cfg, n_test=args.n_test)
    train, ttr, test, tte = generate_train_test(cfg)
    out = _ensure_dir(args.out)
    prov = _provenance(args, "simulate")
    com = _comments(prov)
    write_dataset_csv(out / "train.csv", train, comments=com)
    write_dataset_csv(out / "test.csv", test, comments=com)
    for name, tr in (("truth_train.csv", ttr), ("truth_test.csv", tte)):
        header = ["id", "theta1", "theta0", "lambda", "d1", "d2", "y", "interior_mean", "expected_y"]
        cols = [tr.theta1, tr.theta0, tr.lam, tr.d1, tr.d2, tr.y, tr.interior_mean, tr.expected_y]
        if tr.expected_treated is not None:
            header += ["arm", "expected_treated", "expected_control"]
            cols += [tr.arm, tr.expected_treated, tr.expected_control]
        rows = []
        for i in range(tr.y.size):
            rows.append([i] + [int(c[i]) if c.dtype.kind in "iu" else float(c[i]) for c in cols])
        write_csv(out / name, header, rows, com)
    cfg_dict = asdict(cfg)
    _write_json(out / "config.json", {"provenance": prov, "config": cfg_dict})
    print(f"wrote {train.n} training and {test.n} held-out rows to {out}")
    return 0


def cmd_benchmark(args) -> int:
    rows = run_benchmark(args.scenarios, args.replications, _hyperparams(args), _schedule(args))
    prov = _provenance(args, "benchmark")
    write_csv(args.out, ["model", "scenario", "replication", "mae", "rmse", "adj_r2"],
              [[r.model, r.scenario, r.replication, r.mae, r.rmse, r.adj_r2] for r in rows], _comments(prov))
    for scen in args.scenarios:
        for model in MODELS:
            sel = [r for r in rows if r.scenario == scen and r.model == model]
            print(f"{scen:>16} {model:>12} MAE {np.mean([r.mae for r in sel]):.4f} "
                  f"RMSE {np.mean([r.rmse for r in sel]):.4f} adjR2 {np.mean([r.adj_r2 for r in sel]):.4f}")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _add_model_args(p, trees: int) -> None:
    d = Hyperparams()
    p.add_argument("--trees", type=int, default=trees)
    p.add_argument("--iterations", type=int, default=5000)
    p.add_argument("--burn-in", type=int, default=2500)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--alpha-g", type=float, default=d.alpha_g)
    p.add_argument("--beta-g", type=float, default=d.beta_g)
    p.add_argument("--alpha-kappa", type=float, default=d.alpha_kappa)
    p.add_argument("--beta-kappa", type=float, default=d.beta_kappa)
    p.add_argument("--min-leaf-size", type=int, default=d.min_leaf_size)


def _add_data_args(p) -> None:
    p.add_argument("--response", default="y", help="response column name")
    p.add_argument("--exclude", nargs="*", default=["id"], help="columns that are not covariates")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hobzbart", description="Sequential-hurdle tree ensembles for [0, 1] outcomes.")
    ap.add_argument("--version", action="version", version=f"hobzbart {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="run the sampler and save posterior draws")
    p.add_argument("--data", required=True)
    p.add_argument("--test", help="CSV of rows to predict at every kept draw")
    p.add_argument("--out", required=True)
    p.add_argument("--summary", help="convergence summary path (default: <out>.summary.json)")
    p.add_argument("--model", choices=("bart", "linear"), default="bart")
    p.add_argument("--seed", type=int, default=0)
    _add_data_args(p)
    _add_model_args(p, trees=200)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior expectations from a draw file")
    p.add_argument("--draws", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--samples", help="also write simulated outcomes here")
    p.add_argument("--metrics", help="write MAE/RMSE/adjR2 here")
    p.add_argument("--truth", help="truth sidecar to score against")
    p.add_argument("--truth-column", default="expected_y")
    p.add_argument("--observed", help="dataset CSV whose response to score against")
    p.add_argument("--seed", type=int, default=0)
    _add_data_args(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("pite", help="individual treatment effects from two per-arm draw files")
    p.add_argument("--treated", required=True)
    p.add_argument("--control", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot-data")
    p.add_argument("--metric", choices=METRIC_KINDS, default=FULL)
    p.add_argument("--level", type=float, default=0.6)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pite)

    p = sub.add_parser("permtest", help="permutation test for effect heterogeneity")
    p.add_argument("--data", required=True)
    p.add_argument("--arm-column", default="arm")
    p.add_argument("--out", required=True)
    p.add_argument("--n-perm", type=int, default=500)
    p.add_argument("--metric", choices=METRIC_KINDS, default=FULL)
    p.add_argument("--level", type=float, default=0.6)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    _add_data_args(p)
    _add_model_args(p, trees=200)
    p.set_defaults(func=cmd_permtest)

    p = sub.add_parser("simulate", help="write a simulated dataset and its truth sidecar")
    p.add_argument("--preset", required=True, choices=[c.name for c in scenario_presets()])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, help="override training rows")
    p.add_argument("--n-test", type=int, help="override held-out rows")
    p.add_argument("--two-arm", action="store_true")
    p.add_argument("--arm-shift", type=float, nargs=3, default=(0.0, 0.0, 0.0),
                   metavar=("ONE", "ZERO", "MEAN"), help="treated-arm intercept shifts")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="tree ensemble vs linear baseline on presets")
    p.add_argument("--scenarios", nargs="+", default=["grid_n500_p15"])
    p.add_argument("--replications", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_model_args(p, trees=100)
    p.set_defaults(func=cmd_benchmark)
    return ap


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except HobzError as exc:
        err = exc
    except (ValueError, TypeError) as exc:
        err = ValidationError(str(exc))
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        err = NumericError(str(exc))
    except OSError as exc:
        err = DataIOError(str(exc))
    print(f"hobzbart-error {err.code} {err.exit_code}", file=sys.stderr)
    print(str(err), file=sys.stderr)
    return err.exit_code


def main() -> None:
    sys.exit(run_cli())
