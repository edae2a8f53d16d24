"""Command-line interface: ``stabreg {fit,simulate,benchmark,stabsel,report}``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 benchmark
finished with flagged method failures. ``STABREG_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from stabreg.dataset import load_csv, write_csv
from stabreg.evaluation import ALL_METHODS, default_methods, default_sr_config, run_benchmark, write_report
from stabreg.exceptions import InputError, NumericalError, StabRegError, ValidationError
from stabreg.simulations import gen_sim1, gen_sim2, gen_toy, sim1_design, sim2_design
from stabreg.stability_selection import run_stability_selection, write_selection_scatter
from stabreg.stabilized_regression import (
    SRConfig,
    fit_sr,
    importance_coef,
    importance_srdiff,
    importance_weight,
    model_to_json,
    srpred_config,
)
from stabreg._random import derive_seed

log = logging.getLogger("stabreg")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4


def _dump_json(doc, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _alpha(value: str):
    if value == "off":
        return "off"
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'off', got {value!r}") from None


def _n_sets(value: str):
    if value == "exhaustive":
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'exhaustive', got {value!r}") from None


def _positive_int(value: str) -> int:
    try:
        v = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {value!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, type=Path, help="input CSV with a header row")
    p.add_argument("--response", default="y", help="response column (default: y)")
    p.add_argument("--env", default="env", help="environment column (default: env)")
    p.add_argument("--predictors", default=None, help="comma-separated predictor columns (default: all others)")


def _add_sr_args(p: argparse.ArgumentParser) -> None:
    d = SRConfig()
    p.add_argument("--alpha-stab", type=_alpha, default=d.alpha_stab)
    p.add_argument("--alpha-pred", type=_alpha, default=d.alpha_pred)
    p.add_argument("--stab-test", choices=["auto", "chow", "scaled_residual"], default=d.stab_test)
    p.add_argument("--pred-kind", choices=["pooled", "min_env"], default=d.pred_kind)
    p.add_argument("--screen", choices=["none", "corr", "lasso"], default=d.screen)
    p.add_argument("--screen-size", type=_positive_int, default=None)
    p.add_argument("--n-sets", type=_n_sets, default=d.n_sets)
    p.add_argument("--max-set-size", type=_positive_int, default=d.max_set_size)
    p.add_argument("--B-boot", type=_positive_int, default=d.B_boot)
    p.add_argument("--B-resample", type=_positive_int, default=d.B_resample)


def _sr_config(args) -> SRConfig:
    return SRConfig(
        alpha_stab=args.alpha_stab,
        alpha_pred=args.alpha_pred,
        stab_test=args.stab_test,
        pred_kind=args.pred_kind,
        screen=args.screen,
        screen_size=args.screen_size,
        n_sets=args.n_sets,
        max_set_size=args.max_set_size,
        B_boot=args.B_boot,
        B_resample=args.B_resample,
        seed=args.seed,
    )


def _load(args):
    preds = args.predictors.split(",") if args.predictors else None
    return load_csv(args.data, args.response, args.env, preds)


def cmd_fit(args) -> int:
    config = _sr_config(args)
    ds = _load(args)
    model = fit_sr(ds, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(model_to_json(model), out / "model.json")
    cols = {"weight": importance_weight(model).values, "coef": importance_coef(model).values}
    if args.srdiff:
        pred = fit_sr(ds, srpred_config(config))
        _dump_json(model_to_json(pred), out / "model_srpred.json")
        cols["srpred_coef"] = importance_coef(pred).values
        cols["srdiff"] = importance_srdiff(model, pred, "coef").values
    with (out / "importance.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", *cols])
        for j, name in enumerate(ds.column_names):
            w.writerow([name, *(repr(float(v[j])) for v in cols.values())])
    log.info("fitted %d optimal sets out of %d candidates", len(model.optimal_sets), len(model.candidate_sets))
    return EXIT_OK


def _design(args):
    if args.design == "sim1":
        kw = {} if args.n_per_env is None else {"n_per_env": args.n_per_env}
        return sim1_design(**kw)
    kw = {} if args.n_per_env is None else {"n_per_env": args.n_per_env}
    return sim2_design(d=args.d or 201, **kw)


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rep in range(args.reps):
        seed = derive_seed(args.seed, rep)
        if args.design == "toy":
            n = args.n_per_env or 2000
            train, test, truth, scm = gen_toy(args.case, n_per_env=n, rng_seed=seed)
        elif args.design == "sim1":
            train, test, truth, scm = gen_sim1(_design(args), seed)
        else:
            train, test, truth, scm = gen_sim2(_design(args), seed)
        rdir = out / f"rep_{rep:03d}"
        rdir.mkdir(exist_ok=True)
        write_csv(train, rdir / "train.csv")
        write_csv(test, rdir / "test.csv")
        _dump_json({"seed": seed, **truth.to_json()}, rdir / "truth.json")
        _dump_json(scm.to_json(), rdir / "scm.json")
    return EXIT_OK


def _gamma_grid(value: str) -> tuple[float, ...]:
    try:
        grid = tuple(float(v) for v in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from None
    if any(not g > 0 for g in grid):
        raise argparse.ArgumentTypeError("gamma values must be positive")
    return grid


def cmd_benchmark(args) -> int:
    if args.design == "toy":
        raise ValidationError("benchmark supports the sim1 and sim2 designs")
    design = _design(args)
    methods = args.methods.split(",") if args.methods else list(default_methods(design))
    sr_config = None
    if args.alpha_stab is not None or args.alpha_pred is not None:
        base = default_sr_config(design)
        sr_config = replace(
            base,
            alpha_stab=base.alpha_stab if args.alpha_stab is None else args.alpha_stab,
            alpha_pred=base.alpha_pred if args.alpha_pred is None else args.alpha_pred,
        )
    result = run_benchmark(design, methods, args.reps, args.seed, args.jobs, sr_config, args.gamma)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(result, out / "bench.json")
    if result["flagged"]:
        log.warning("methods with more than 10%% failures: %s", ", ".join(result["flagged"]))
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_stabsel(args) -> int:
    config = _sr_config(args)
    ds = _load(args)
    annotations = None
    if args.annotations:
        with Path(args.annotations).open(newline="", encoding="utf-8") as fh:
            annotations = {row[0]: row[1] for row in csv.reader(fh) if len(row) >= 2}
    profile = run_stability_selection(ds, config, args.n_subsamples, args.seed, args.jobs)
    write_selection_scatter(profile, args.out, annotations)
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.input)
    try:
        result = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read benchmark result {path}: {exc}") from None
    if not isinstance(result, dict) or result.get("version") != "stabreg-bench/1":
        raise InputError(f"{path} is not a benchmark result")
    write_report(result, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stabreg", description="Stabilized regression toolkit")
    parser.add_argument("--log-level", default=None, help="overrides STABREG_LOG (e.g. INFO, DEBUG)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit stabilized regression on a CSV file")
    _add_data_args(p)
    _add_sr_args(p)
    p.add_argument("--srdiff", action="store_true", help="also fit the predictive variant and the difference importance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="write simulated data sets")
    p.add_argument("--design", choices=["sim1", "sim2", "toy"], default="sim1")
    p.add_argument("--case", choices=["i", "ii"], default="i", help="toy model case")
    p.add_argument("--d", type=_positive_int, default=None, help="number of variables for sim2 (default 201)")
    p.add_argument("--n-per-env", type=_positive_int, default=None)
    p.add_argument("--reps", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="run the simulation benchmark")
    p.add_argument("--design", choices=["sim1", "sim2", "toy"], default="sim1")
    p.add_argument("--d", type=_positive_int, default=None)
    p.add_argument("--n-per-env", type=_positive_int, default=None)
    p.add_argument("--methods", default=None, help=f"comma-separated subset of {','.join(ALL_METHODS)}")
    p.add_argument("--reps", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha-stab", type=_alpha, default=None, help="overrides the benchmark SR setting")
    p.add_argument("--alpha-pred", type=_alpha, default=None, help="overrides the benchmark SR setting")
    p.add_argument("--gamma", type=_gamma_grid, default=None, help="comma-separated anchor gamma grid")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", required=True, help="output directory (bench.json)")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("stabsel", help="selection probabilities over half-subsamples")
    _add_data_args(p)
    _add_sr_args(p)
    p.add_argument("--n-subsamples", type=_positive_int, default=100)
    p.add_argument("--annotations", default=None, help="CSV of variable,label pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stabsel)

    p = sub.add_parser("report", help="convert a benchmark JSON into tidy CSV files")
    p.add_argument("--input", required=True, help="bench.json written by the benchmark command")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (args.log_level or os.environ.get("STABREG_LOG") or "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except StabRegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
