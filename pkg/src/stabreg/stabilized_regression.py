"""Stabilized regression: averaging subset regressions that are stable and predictive.

The estimator screens predictors, draws a collection of candidate
subsets, keeps those whose stability p-value is at least ``alpha_stab``,
keeps among them those whose prediction score clears a bootstrap cutoff,
and averages the OLS fits of the survivors with uniform weights.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations
import numpy as np

from stabreg._random import derive_seed, make_rng
from stabreg.dataset import MultiEnvDataset
from stabreg.exceptions import NumericalError, ValidationError
from stabreg.linear_model import SubsetFit, default_lambdas, fit_lasso_path, fit_ols, predict
from stabreg.prediction_scores import (
    KINDS,
    best_subset,
    bootstrap_cutoff,
    filter_optimal,
    score_of_fit,
)
from stabreg.stability_tests import ResidualResampler, chow_test

log = logging.getLogger(__name__)

MODEL_VERSION = "stabreg-model/1"
MAX_EXHAUSTIVE = 15

# child-seed keys
_K_SCREEN, _K_SETS, _K_RESAMPLE, _K_BOOT, _K_PERM = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class SRConfig:
    """Settings of :func:`fit_sr`.

    Attributes
    ----------
    alpha_stab : float in (0, 1) or "off"
        Stability cutoff on the test p-value; "off" keeps every candidate.
    alpha_pred : float in (0, 1] or "off"
        Quantile level of the bootstrap prediction cutoff; "off" disables
        the prediction filter so that every stable set is kept.
    stab_test : {"auto", "chow", "scaled_residual"}
        "auto" uses the Chow test with at most three environments and the
        scaled-residual test otherwise.
    pred_kind : {"pooled", "min_env"}
    screen : {"none", "corr", "lasso"}
    screen_size : int, optional
        Number of screened predictors; defaults to ``floor(min_e n_e / 2)``.
    n_sets : int or "exhaustive"
    max_set_size : int
    B_boot, B_resample : int
        Bootstrap samples for the cutoff, resamples for the residual test.
    seed : int
    """

    alpha_stab: float | str = 0.05
    alpha_pred: float | str = 0.01
    stab_test: str = "auto"
    pred_kind: str = "pooled"
    screen: str = "corr"
    screen_size: int | None = None
    n_sets: int | str = 1000
    max_set_size: int = 6
    B_boot: int = 100
    B_resample: int = 999
    seed: int = 0

    def __post_init__(self):
        if self.alpha_stab != "off" and not (
            isinstance(self.alpha_stab, (int, float)) and 0 < self.alpha_stab < 1
        ):
            raise ValidationError(f"alpha_stab must be in (0, 1) or 'off', got {self.alpha_stab!r}")
        if self.alpha_pred != "off" and not (
            isinstance(self.alpha_pred, (int, float)) and 0 < self.alpha_pred <= 1
        ):
            raise ValidationError(f"alpha_pred must be in (0, 1] or 'off', got {self.alpha_pred!r}")
        if self.stab_test not in ("auto", "chow", "scaled_residual"):
            raise ValidationError(f"unknown stab_test {self.stab_test!r}")
        if self.pred_kind not in KINDS:
            raise ValidationError(f"unknown pred_kind {self.pred_kind!r}")
        if self.screen not in ("none", "corr", "lasso"):
            raise ValidationError(f"unknown screen {self.screen!r}")
        if self.screen_size is not None and int(self.screen_size) < 1:
            raise ValidationError("screen_size must be positive")
        if self.n_sets != "exhaustive" and not (isinstance(self.n_sets, int) and self.n_sets >= 1):
            raise ValidationError(f"n_sets must be a positive integer or 'exhaustive', got {self.n_sets!r}")
        if self.max_set_size < 1:
            raise ValidationError("max_set_size must be positive")
        if self.B_boot < 20:
            raise ValidationError("B_boot must be at least 20")
        if self.B_resample < 1:
            raise ValidationError("B_resample must be positive")


def srpred_config(config: SRConfig) -> SRConfig:
    """Predictive variant: no stability filter, worst-environment score."""
    return replace(config, alpha_stab="off", pred_kind="min_env")


@dataclass(eq=False)
class SRModel:
    """Fitted stabilized regression.

    All subsets are tuples of original column indices. ``weights`` and
    ``fits`` are aligned with ``optimal_sets``.
    """

    config: SRConfig
    d: int
    column_names: tuple[str, ...]
    screened: tuple[int, ...]
    candidate_sets: list[tuple[int, ...]]
    stable_sets: list[tuple[int, ...]]
    optimal_sets: list[tuple[int, ...]]
    weights: np.ndarray
    fits: list[SubsetFit]
    diagnostics: dict = field(default_factory=dict)

    def coef(self) -> np.ndarray:
        """Averaged coefficient vector over all ``d`` columns."""
        beta = np.zeros(self.d)
        for w, fit in zip(self.weights, self.fits):
            beta[list(fit.subset)] += w * fit.coefs
        return beta

    @property
    def intercept(self) -> float:
        return float(sum(w * fit.intercept for w, fit in zip(self.weights, self.fits)))


@dataclass(frozen=True, eq=False)
class ImportanceVector:
    method: str
    values: np.ndarray


# ---------------------------------------------------------------------------
# screening and candidate sets


def screen_corr_rank(ds: MultiEnvDataset) -> np.ndarray:
    """Columns by decreasing absolute pooled correlation with ``y`` (ties by index)."""
    Xc = ds.X - ds.X.mean(axis=0)
    yc = ds.y - ds.y.mean()
    denom = np.sqrt((Xc**2).sum(axis=0) * (yc @ yc))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, np.abs(Xc.T @ yc) / denom, 0.0)
    return np.lexsort((np.arange(ds.d), -corr))


def screen_corr(ds: MultiEnvDataset, k: int) -> tuple[int, ...]:
    """Top ``k`` columns by absolute pooled correlation with ``y`` (ties by index)."""
    if k >= ds.d:
        return tuple(range(ds.d))
    return tuple(sorted(int(j) for j in screen_corr_rank(ds)[:k]))


def lasso_entry_order(ds: MultiEnvDataset, n_lambdas: int = 200) -> list[int]:
    """Columns in the order they first become active along the Lasso path.

    Columns entering at the same penalty are ordered by decreasing
    standardized coefficient magnitude.
    """
    path = fit_lasso_path(ds, default_lambdas(ds, n_lambdas))
    sd = ds.X.std(axis=0)
    order: list[int] = []
    seen: set[int] = set()
    for fit in path:
        new = [j for j in fit.active_set if j not in seen]
        new.sort(key=lambda j: (-abs(fit.coefs[j] * sd[j]), j))
        order.extend(new)
        seen.update(new)
    return order


def screen_lasso(ds: MultiEnvDataset, k: int, rng_seed: int = 0) -> tuple[int, ...]:
    """First ``k`` distinct columns entering the Lasso path, padded by correlation.

    ``rng_seed`` is accepted for interface symmetry; the path is deterministic.
    """
    if k >= ds.d:
        return tuple(range(ds.d))
    chosen = lasso_entry_order(ds)[:k]
    if len(chosen) < k:
        for j in screen_corr_rank(ds):
            j = int(j)
            if len(chosen) == k:
                break
            if j not in chosen:
                chosen.append(j)
    return tuple(sorted(chosen))


def generate_sets(
    d: int, n_sets: int | str = 1000, max_set_size: int = 6, rng_seed: int = 0
) -> list[tuple[int, ...]]:
    """Candidate subsets of ``{0, ..., d-1}``.

    "exhaustive" lists all ``2^d`` subsets (``d <= 15``). Otherwise the
    empty set and all singletons come first, followed by random sets whose
    size is uniform on ``{2, ..., max_set_size}`` and whose members are
    uniform given the size, without duplicates, until ``n_sets`` sets exist
    or every set of size at most ``max_set_size`` has been listed.
    """
    if n_sets == "exhaustive":
        if d > MAX_EXHAUSTIVE:
            raise ValidationError(f"exhaustive enumeration limited to {MAX_EXHAUSTIVE} predictors, got {d}")
        return [c for k in range(d + 1) for c in combinations(range(d), k)]
    m = min(max_set_size, d)
    base = [()] + [(j,) for j in range(d)]
    counts = {k: math.comb(d, k) for k in range(2, m + 1)}
    universe = len(base) + sum(counts.values())
    if universe <= n_sets:
        return base + [c for k in range(2, m + 1) for c in combinations(range(d), k)]
    rng = make_rng(rng_seed)
    seen: set[tuple[int, ...]] = set(base)
    out = list(base)
    taken = {k: 0 for k in counts}
    while len(out) < n_sets:
        sizes = [k for k in counts if taken[k] < counts[k]]
        k = int(sizes[rng.integers(len(sizes))]) if len(sizes) < len(counts) else int(rng.integers(2, m + 1))
        s = tuple(sorted(int(j) for j in rng.choice(d, size=k, replace=False)))
        if s in seen:
            continue
        seen.add(s)
        taken[k] += 1
        out.append(s)
    return out


# ---------------------------------------------------------------------------
# fitting


def _default_screen_size(ds: MultiEnvDataset) -> int:
    return max(1, min(ds.env_index.sizes) // 2)


def _screen(ds: MultiEnvDataset, config: SRConfig) -> tuple[int, ...]:
    if config.screen == "none":
        return tuple(range(ds.d))
    k = config.screen_size if config.screen_size is not None else _default_screen_size(ds)
    if config.screen == "corr":
        return screen_corr(ds, k)
    return screen_lasso(ds, k, derive_seed(config.seed, _K_SCREEN))


def resolve_stab_test(config: SRConfig, n_envs: int) -> str:
    if config.stab_test != "auto":
        return config.stab_test
    return "chow" if n_envs <= 3 else "scaled_residual"


def fit_sr(ds: MultiEnvDataset, config: SRConfig | None = None) -> SRModel:
    """Fit stabilized regression.

    Candidate sets whose fit or test fails numerically are dropped and
    listed in ``diagnostics["dropped"]``. If no candidate passes the
    stability cutoff, the set with the largest p-value is kept and
    ``diagnostics["no_stable_sets"]`` is set.

    Raises
    ------
    ValidationError
        Stability filtering requested with a single environment, or no
        candidate set could be fitted.
    """
    config = config or SRConfig()
    use_stab = config.alpha_stab != "off"
    if use_stab and ds.n_envs < 2:
        raise ValidationError("stability filtering needs at least two environments")
    screened = _screen(ds, config)
    sub = MultiEnvDataset(ds.X[:, list(screened)], ds.y, ds.env)
    local_sets = generate_sets(len(screened), config.n_sets, config.max_set_size, derive_seed(config.seed, _K_SETS))
    to_orig = lambda s: tuple(screened[j] for j in s)  # noqa: E731

    method = resolve_stab_test(config, ds.n_envs) if use_stab else None
    resampler = None
    if method == "scaled_residual":
        resampler = ResidualResampler(sub, config.B_resample, derive_seed(config.seed, _K_RESAMPLE))

    fits: dict[tuple[int, ...], SubsetFit] = {}
    pvals: dict[tuple[int, ...], float] = {}
    scores: dict[tuple[int, ...], float] = {}
    dropped: dict[tuple[int, ...], str] = {}
    for s in local_sets:
        try:
            fit = fit_ols(sub, s)
            if method == "chow":
                p = chow_test(sub, s).p_value
            elif method == "scaled_residual":
                p = resampler.test(s).p_value
            else:
                p = 1.0
        except NumericalError as exc:
            dropped[s] = str(exc)
            continue
        fits[s] = fit
        pvals[s] = p
        scores[s] = score_of_fit(fit, config.pred_kind)
    if not fits:
        raise ValidationError("no candidate set could be fitted")
    candidates = list(fits)

    no_stable = False
    if use_stab:
        stable = [s for s in candidates if pvals[s] >= config.alpha_stab]
        if not stable:
            no_stable = True
            stable = [min(candidates, key=lambda s: (-pvals[s], len(s), s))]
            log.warning("no stable set at alpha_stab=%s; keeping the most stable set", config.alpha_stab)
    else:
        stable = candidates

    stable_scores = {s: scores[s] for s in stable}
    cutoff = None
    if config.alpha_pred == "off":
        optimal = sorted(stable, key=lambda s: (len(s), s))
        best = best_subset(stable_scores)
    else:
        cutoff = bootstrap_cutoff(
            sub, stable, config.pred_kind, config.B_boot, float(config.alpha_pred),
            derive_seed(config.seed, _K_BOOT), scores=stable_scores,
        )
        best = cutoff.best_set
        optimal = filter_optimal(stable_scores, cutoff.c_pred, best)

    weights = np.full(len(optimal), 1.0 / len(optimal))
    opt_fits = [replace(fits[s], subset=to_orig(s)) for s in optimal]
    diagnostics = {
        "stab_test": method,
        "p_values": {to_orig(s): pvals[s] for s in candidates},
        "scores": {to_orig(s): scores[s] for s in candidates},
        "dropped": {to_orig(s): msg for s, msg in dropped.items()},
        "no_stable_sets": no_stable,
        "best_set": to_orig(best),
        "c_pred": None if cutoff is None else cutoff.c_pred,
    }
    return SRModel(
        config=config,
        d=ds.d,
        column_names=ds.column_names,
        screened=screened,
        candidate_sets=[to_orig(s) for s in candidates],
        stable_sets=[to_orig(s) for s in stable],
        optimal_sets=[to_orig(s) for s in optimal],
        weights=weights,
        fits=opt_fits,
        diagnostics=diagnostics,
    )


def predict_sr(model: SRModel, Xnew) -> np.ndarray:
    """Weighted average of the selected subset predictions."""
    Xnew = np.asarray(Xnew, dtype=float)
    if Xnew.ndim != 2 or Xnew.shape[1] != model.d:
        raise ValidationError(f"Xnew must have {model.d} columns")
    out = np.zeros(Xnew.shape[0])
    for w, fit in zip(model.weights, model.fits):
        out += w * predict(fit, Xnew)
    return out


# ---------------------------------------------------------------------------
# variable importance


def importance_weight(model: SRModel) -> ImportanceVector:
    """Total weight of the selected sets containing each variable."""
    v = np.zeros(model.d)
    for w, s in zip(model.weights, model.optimal_sets):
        v[list(s)] += w
    return ImportanceVector("weight", v)


def importance_coef(model: SRModel) -> ImportanceVector:
    """Weighted average of absolute coefficients over the selected sets."""
    v = np.zeros(model.d)
    for w, fit in zip(model.weights, model.fits):
        v[list(fit.subset)] += w * np.abs(fit.coefs)
    return ImportanceVector("coef", v)


def importance_perm(model: SRModel, ds: MultiEnvDataset, B: int = 10, rng_seed: int = 0) -> ImportanceVector:
    """Mean relative increase of the training RSS after permuting each column."""
    if B < 1:
        raise ValidationError("B must be positive")
    rss = float(np.sum((ds.y - predict_sr(model, ds.X)) ** 2))
    used = set(j for s in model.optimal_sets for j in s)
    v = np.zeros(model.d)
    for j in sorted(used):
        rng = make_rng(rng_seed, _K_PERM, j)
        X = np.array(ds.X)
        total = 0.0
        for _ in range(B):
            X[:, j] = ds.X[rng.permutation(ds.n), j]
            total += float(np.sum((ds.y - predict_sr(model, X)) ** 2)) - rss
        v[j] = total / B / max(rss, 1e-300)
    return ImportanceVector("perm", v)


def importance_srdiff(model_sr: SRModel, model_srpred: SRModel, kind: str = "coef") -> ImportanceVector:
    """Importance under the predictive variant minus importance under SR."""
    if kind not in ("weight", "coef"):
        raise ValidationError("kind must be 'weight' or 'coef'")
    if model_sr.d != model_srpred.d:
        raise ValidationError("models were fitted on different column counts")
    fn = importance_weight if kind == "weight" else importance_coef
    return ImportanceVector("srdiff", fn(model_srpred).values - fn(model_sr).values)


# ---------------------------------------------------------------------------
# serialization


def _config_json(config: SRConfig) -> dict:
    return asdict(config)


def model_to_json(model: SRModel) -> dict:
    """JSON-ready document describing a fitted model (stable key order)."""
    names = model.column_names
    name_set = lambda s: [names[j] for j in s]  # noqa: E731
    return {
        "version": MODEL_VERSION,
        "config": _config_json(model.config),
        "column_names": list(names),
        "screened": name_set(model.screened),
        "n_candidate_sets": len(model.candidate_sets),
        "n_stable_sets": len(model.stable_sets),
        "sets": [
            {
                "variables": name_set(fit.subset),
                "weight": float(w),
                "intercept": float(fit.intercept),
                "coefficients": [float(c) for c in fit.coefs],
                "p_value": float(model.diagnostics["p_values"][fit.subset]),
                "score": float(model.diagnostics["scores"][fit.subset]),
            }
            for w, fit in zip(model.weights, model.fits)
        ],
        "diagnostics": {
            "stab_test": model.diagnostics["stab_test"],
            "no_stable_sets": bool(model.diagnostics["no_stable_sets"]),
            "best_set": name_set(model.diagnostics["best_set"]),
            "c_pred": model.diagnostics["c_pred"],
            "n_dropped": len(model.diagnostics["dropped"]),
        },
    }


__all__ = [
    "ImportanceVector",
    "SRConfig",
    "SRModel",
    "fit_sr",
    "generate_sets",
    "importance_coef",
    "importance_perm",
    "importance_srdiff",
    "importance_weight",
    "model_to_json",
    "predict_sr",
    "screen_corr",
    "screen_lasso",
    "srpred_config",
]
