"""Test-environment prediction error, blanket-recovery ROC curves and the benchmark runner."""

from __future__ import annotations

import csv
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from stabreg._random import derive_seed
from stabreg.baselines import DEFAULT_GAMMA_GRID, cv_anchor_gamma, fit_cv_lasso, fit_iv, fit_pooled_ols
from stabreg.dataset import MultiEnvDataset
from stabreg.exceptions import StabRegError, ValidationError
from stabreg.simulations import SimDesign, gen_sim1, gen_sim2
from stabreg.stabilized_regression import (
    SRConfig,
    fit_sr,
    importance_coef,
    importance_srdiff,
    predict_sr,
    srpred_config,
)

log = logging.getLogger(__name__)

BENCH_VERSION = "stabreg-bench/1"
ALL_METHODS = ("sr", "srpred", "srdiff", "ols", "lasso", "ar", "iv", "ar_lasso", "iv_lasso")
RANKING_ONLY = ("srdiff",)
TARGETS = ("mb", "sb", "nsb")
MAX_FP = 10
FAILURE_FLAG_RATE = 0.10


@dataclass(frozen=True, eq=False)
class RecoveryCurve:
    """ROC of an importance ranking, truncated at ``max_fp`` false positives.

    ``fp_counts`` holds the cumulative false-positive counts matching
    ``fpr``; ``pauc`` is the normalized partial area.
    """

    target: str
    fpr: np.ndarray
    tpr: np.ndarray
    fp_counts: np.ndarray
    pauc: float
    max_fp: int

    def tpr_at_fp(self, k: float) -> float:
        """TPR after ``k`` false positives, interpolating linearly within tie groups."""
        return float(np.interp(k, self.fp_counts, self.tpr, right=self.tpr[-1]))


def test_rss(predict_fn: Callable[[np.ndarray], np.ndarray], test: MultiEnvDataset) -> float:
    """Mean over test environments of the environment's mean squared residual."""
    resid = test.y - predict_fn(test.X)
    return float(np.mean([np.mean(resid[rows] ** 2) for rows in test.env_index.row_sets]))


test_rss.__test__ = False  # not a pytest test


def roc_from_ranking(importance, truth_set, max_fp: int = MAX_FP, target: str = "") -> RecoveryCurve:
    """ROC of the ranking by decreasing importance against ``truth_set``.

    Variables with equal importance form a tie group that enters the curve
    as one linear segment. The partial area is taken over the first
    ``W = min(max_fp, n_negatives)`` false positives and divided by ``W``,
    so that a perfect ranking scores 1.

    Raises
    ------
    ValidationError
        ``truth_set`` is empty.
    """
    imp = np.asarray(importance, dtype=float)
    d = imp.shape[0]
    truth = np.zeros(d, dtype=bool)
    truth[list(truth_set)] = True
    n_pos = int(truth.sum())
    n_neg = d - n_pos
    if n_pos == 0:
        raise ValidationError("ROC undefined for an empty truth set")
    values, inverse = np.unique(-imp, return_inverse=True)
    tp_g = np.bincount(inverse, weights=truth, minlength=len(values))
    fp_g = np.bincount(inverse, weights=~truth, minlength=len(values))
    fp = np.concatenate([[0.0], np.cumsum(fp_g)])
    tp = np.concatenate([[0.0], np.cumsum(tp_g)])
    window = min(max_fp, n_neg)
    if window == 0:
        return RecoveryCurve(target, np.zeros_like(fp), tp / n_pos, fp, 1.0, max_fp)
    i = int(np.argmax(fp >= window))
    tp_end = tp[i - 1] + (tp[i] - tp[i - 1]) * (window - fp[i - 1]) / (fp[i] - fp[i - 1])
    fp_cut = np.concatenate([fp[:i], [window]])
    tp_cut = np.concatenate([tp[:i], [tp_end]])
    area = float(np.sum(np.diff(fp_cut) * (tp_cut[1:] + tp_cut[:-1]) / 2))
    return RecoveryCurve(target, fp_cut / n_neg, tp_cut / n_pos, fp_cut, area / (window * n_pos), max_fp)


# ---------------------------------------------------------------------------
# benchmark


def default_methods(design: SimDesign) -> tuple[str, ...]:
    if design.kind == "sim2":
        return ("sr", "srpred", "srdiff", "lasso", "ar_lasso", "iv_lasso")
    return ("sr", "srpred", "srdiff", "ols", "lasso", "ar", "iv")


def default_sr_config(design: SimDesign, seed: int = 0) -> SRConfig:
    """SR settings used by the benchmark.

    Small designs enumerate every subset of all predictors; large designs
    first keep ten predictors by Lasso screening.
    """
    if design.d - 1 <= 10:
        return SRConfig(alpha_stab=0.01, alpha_pred=0.01, screen="none", n_sets="exhaustive", seed=seed)
    return SRConfig(alpha_stab=0.01, alpha_pred=0.01, screen="lasso", screen_size=10,
                    n_sets="exhaustive", seed=seed)


def data_hash(train: MultiEnvDataset, test: MultiEnvDataset) -> str:
    h = hashlib.sha256()
    for ds in (train, test):
        h.update(np.ascontiguousarray(ds.X).tobytes())
        h.update(np.ascontiguousarray(ds.y).tobytes())
        h.update("\x1f".join(ds.env).encode())
    return h.hexdigest()


def _generate(design: SimDesign, seed: int):
    gen = gen_sim1 if design.kind == "sim1" else gen_sim2
    return gen(design, seed)


def _fit_methods(train: MultiEnvDataset, methods: Sequence[str], sr_config: SRConfig, seed: int,
                 gamma_grid=DEFAULT_GAMMA_GRID):
    """Return ``{method: (predict_fn or None, importance)}`` and failures."""
    out, failures = {}, {}
    sr_models = {}

    def sr_model(kind):
        if kind not in sr_models:
            cfg = sr_config if kind == "sr" else srpred_config(sr_config)
            sr_models[kind] = fit_sr(train, cfg)
        return sr_models[kind]

    for m in methods:
        try:
            if m in ("sr", "srpred"):
                model = sr_model(m)
                out[m] = (lambda X, model=model: predict_sr(model, X), importance_coef(model).values)
            elif m == "srdiff":
                out[m] = (None, importance_srdiff(sr_model("sr"), sr_model("srpred"), "coef").values)
            else:
                if m == "ols":
                    model = fit_pooled_ols(train)
                elif m == "lasso":
                    model = fit_cv_lasso(train, derive_seed(seed, 7))
                elif m in ("ar", "ar_lasso"):
                    model = cv_anchor_gamma(train, gamma_grid, use_lasso=m == "ar_lasso",
                                            rng_seed=derive_seed(seed, 8))
                elif m in ("iv", "iv_lasso"):
                    model = fit_iv(train, use_lasso=m == "iv_lasso", rng_seed=derive_seed(seed, 9))
                else:
                    raise ValidationError(f"unknown method {m!r}")
                out[m] = (model.predict, model.importance)
        except (StabRegError, np.linalg.LinAlgError) as exc:
            failures[m] = f"{type(exc).__name__}: {exc}"
    return out, failures


def run_repetition(design: SimDesign, methods: Sequence[str], rep: int, master_seed: int,
                   sr_config: SRConfig | None = None, gamma_grid=DEFAULT_GAMMA_GRID) -> dict:
    seed = derive_seed(master_seed, rep)
    train, test, truth, _ = _generate(design, seed)
    sr_config = replace(sr_config or default_sr_config(design), seed=derive_seed(seed, 1))
    fitted, failures = _fit_methods(train, methods, sr_config, seed, gamma_grid)
    record = {
        "rep": rep,
        "seed": seed,
        "stratum": "mb=sb" if truth.mb == truth.sb else "mb!=sb",
        "data_sha256": data_hash(train, test),
        "truth": truth.to_json(),
        "test_rss": {},
        "pauc10": {},
        "tpr_at_fp": {},
        "failures": failures,
    }
    for m in methods:
        if m not in fitted:
            record["test_rss"][m] = None
            record["pauc10"][m] = {t: None for t in TARGETS}
            record["tpr_at_fp"][m] = {t: None for t in TARGETS}
            continue
        predict_fn, importance = fitted[m]
        record["test_rss"][m] = None if predict_fn is None else test_rss(predict_fn, test)
        record["pauc10"][m] = {}
        record["tpr_at_fp"][m] = {}
        for t in TARGETS:
            cols = truth.columns(t)
            if not cols:
                record["pauc10"][m][t] = None
                record["tpr_at_fp"][m][t] = None
                continue
            curve = roc_from_ranking(importance, cols, MAX_FP, t)
            record["pauc10"][m][t] = curve.pauc
            record["tpr_at_fp"][m][t] = [curve.tpr_at_fp(k) for k in range(MAX_FP + 1)]
    return record


def _quantiles(values: list[float]) -> dict:
    if not values:
        return {"n": 0, "median": None, "q25": None, "q75": None}
    v = np.asarray(values)
    return {"n": len(v), "median": float(np.median(v)), "q25": float(np.quantile(v, 0.25)),
            "q75": float(np.quantile(v, 0.75))}


def aggregate(records: list[dict], methods: Sequence[str]) -> dict:
    """Prediction quantiles per stratum and recovery means over repetitions with nonempty SB and NSB."""
    prediction = {}
    for stratum in ("mb=sb", "mb!=sb", "all"):
        rows = [r for r in records if stratum == "all" or r["stratum"] == stratum]
        prediction[stratum] = {
            m: _quantiles([r["test_rss"][m] for r in rows if r["test_rss"].get(m) is not None])
            for m in methods if m not in RANKING_ONLY
        }
    eligible = [r for r in records if r["truth"]["sb"] and r["truth"]["nsb"]]
    recovery, mean_tpr = {}, {}
    for t in TARGETS:
        recovery[t], mean_tpr[t] = {}, {}
        for m in methods:
            vals = [r["pauc10"][m][t] for r in eligible if r["pauc10"][m][t] is not None]
            curves = [r["tpr_at_fp"][m][t] for r in eligible if r["tpr_at_fp"][m][t] is not None]
            recovery[t][m] = {"n": len(vals), "mean": float(np.mean(vals)) if vals else None}
            mean_tpr[t][m] = [float(v) for v in np.mean(curves, axis=0)] if curves else None
    return {"prediction": prediction, "recovery": recovery, "mean_tpr_at_fp": mean_tpr,
            "n_recovery_reps": len(eligible)}


def _run_rep_star(args):
    return run_repetition(*args)


def run_benchmark(
    design: SimDesign,
    methods: Sequence[str] | None = None,
    n_reps: int = 10,
    rng_seed: int = 0,
    parallelism: int = 1,
    sr_config: SRConfig | None = None,
    gamma_grid=None,
) -> dict:
    """Simulate ``n_reps`` data sets, fit every method and collect metrics.

    Each repetition uses a seed derived from ``rng_seed`` and its index, so
    the result does not depend on ``parallelism``. Method failures become
    missing cells; methods failing in more than 10% of repetitions are
    listed under ``flagged``. ``gamma_grid`` is the anchor-regression
    candidate grid (default powers of two from 1/4 to 1024).
    """
    methods = tuple(methods or default_methods(design))
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise ValidationError(f"unknown methods {unknown}; choose from {ALL_METHODS}")
    if n_reps < 1:
        raise ValidationError("n_reps must be positive")
    if parallelism < 1:
        raise ValidationError("parallelism must be positive")
    grid = tuple(float(g) for g in (gamma_grid or DEFAULT_GAMMA_GRID))
    if any(g <= 0 for g in grid):
        raise ValidationError("gamma values must be positive")
    tasks = [(design, methods, rep, rng_seed, sr_config, grid) for rep in range(n_reps)]
    if parallelism == 1:
        records = [_run_rep_star(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(_run_rep_star, tasks))
    records.sort(key=lambda r: r["rep"])
    fail_counts = {m: sum(m in r["failures"] for r in records) for m in methods}
    flagged = [m for m in methods if fail_counts[m] > FAILURE_FLAG_RATE * n_reps]
    return {
        "version": BENCH_VERSION,
        "design": asdict(design),
        "methods": list(methods),
        "n_reps": n_reps,
        "seed": rng_seed,
        "sr_config": asdict(sr_config) if sr_config is not None else None,
        "gamma_grid": list(grid),
        "repetitions": records,
        "aggregates": aggregate(records, methods),
        "failure_counts": fail_counts,
        "flagged": flagged,
    }


# ---------------------------------------------------------------------------
# tidy exports


def prediction_rows(result: dict) -> list[dict]:
    rows = []
    for r in result["repetitions"]:
        for m in result["methods"]:
            v = r["test_rss"].get(m)
            if m in RANKING_ONLY or v is None:
                continue
            rows.append({"method": m, "stratum": r["stratum"], "rep": r["rep"], "test_rss": v})
    return rows


def recovery_rows(result: dict) -> list[dict]:
    rows = []
    for r in result["repetitions"]:
        for m in result["methods"]:
            for t in TARGETS:
                v = r["pauc10"][m][t]
                if v is not None:
                    rows.append({"method": m, "target": t, "rep": r["rep"], "pauc10": v})
    return rows


def write_report(result: dict, out_dir) -> tuple[Path, Path]:
    """Write ``prediction.csv`` and ``recovery.csv`` under ``out_dir``."""
    if not result.get("repetitions"):
        raise ValidationError("benchmark result has no repetitions")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, rows, cols in (
        ("prediction.csv", prediction_rows(result), ["method", "stratum", "rep", "test_rss"]),
        ("recovery.csv", recovery_rows(result), ["method", "target", "rep", "pauc10"]),
    ):
        path = out / name
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        paths.append(path)
    return paths[0], paths[1]
