"""Prediction scores for subsets and the bootstrap cutoff on them.

Scores follow a larger-is-better convention: the negative pooled MSE or
the negative worst-environment MSE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from stabreg._random import make_rng
from stabreg.dataset import MultiEnvDataset, bootstrap_indices
from stabreg.exceptions import NumericalError, ValidationError
from stabreg.linear_model import SubsetFit, fit_ols, mse_per_env, mse_pooled

KINDS = ("pooled", "min_env")


@dataclass(frozen=True)
class PredScore:
    subset: tuple[int, ...]
    score: float
    kind: str


@dataclass(frozen=True, eq=False)
class BootstrapCutoff:
    """Bootstrap distribution of the best stable set's score and its quantile."""

    best_set: tuple[int, ...]
    best_score: float
    samples: np.ndarray
    alpha_pred: float
    c_pred: float


def _check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise ValidationError(f"unknown prediction score kind {kind!r}; expected one of {KINDS}")


def score_of_fit(fit: SubsetFit, kind: str) -> float:
    """Score of a fit on the rows it was fitted on."""
    _check_kind(kind)
    if kind == "pooled":
        return -fit.pooled_mse
    return -max(fit.env_mse.values())


def pred_score(ds: MultiEnvDataset, fit: SubsetFit, kind: str = "pooled") -> PredScore:
    """Score ``fit`` on ``ds``: ``-MSE`` or ``-max_e MSE_e``."""
    _check_kind(kind)
    if kind == "pooled":
        value = -mse_pooled(fit, ds)
    else:
        value = -max(mse_per_env(fit, ds).values())
    return PredScore(fit.subset, value, kind)


def best_subset(scores: Mapping[tuple[int, ...], float]) -> tuple[int, ...]:
    """Highest score; ties go to the smaller set, then lexicographic order."""
    if not scores:
        raise ValidationError("no subsets to choose from")
    return min(scores, key=lambda s: (-scores[s], len(s), s))


def quantile_lower(samples: np.ndarray, alpha: float) -> float:
    """The ``ceil(alpha * B)``-th smallest sample (inverse empirical CDF)."""
    srt = np.sort(np.asarray(samples, dtype=float))
    idx = max(math.ceil(alpha * len(srt) - 1e-12), 1)
    return float(srt[idx - 1])


def bootstrap_cutoff(
    ds: MultiEnvDataset,
    stable_sets: Iterable[Sequence[int]],
    kind: str = "pooled",
    B: int = 100,
    alpha_pred: float = 0.01,
    rng_seed: int = 0,
    scores: Mapping[tuple[int, ...], float] | None = None,
) -> BootstrapCutoff:
    """Cutoff ``c_pred`` from the bootstrap distribution of the best set's score.

    The best set ``Q`` maximizes the score on the original data. For each
    of ``B`` environment-stratified bootstrap samples ``Q`` is refitted and
    scored in-sample; ``c_pred`` is the lower ``alpha_pred`` quantile of
    these scores. ``scores`` may supply precomputed original-data scores.

    Raises
    ------
    ValidationError
        Empty ``stable_sets``, ``B < 20`` or ``alpha_pred`` outside (0, 1].
    NumericalError
        More than ``5 * B`` bootstrap refits were needed.
    """
    _check_kind(kind)
    sets = [tuple(sorted(int(j) for j in s)) for s in stable_sets]
    if not sets:
        raise ValidationError("stable_sets must be nonempty")
    if B < 20:
        raise ValidationError("B must be at least 20")
    if not (0 < alpha_pred <= 1):
        raise ValidationError("alpha_pred must lie in (0, 1]")
    if scores is None:
        scores = {s: score_of_fit(fit_ols(ds, s), kind) for s in sets}
    q = best_subset({s: scores[s] for s in sets})
    rng = make_rng(rng_seed, 0xB007)
    samples = []
    attempts = 0
    while len(samples) < B:
        if attempts >= 5 * B:
            raise NumericalError(f"bootstrap refits of {q} failed {attempts - len(samples)} times")
        attempts += 1
        rows = bootstrap_indices(ds.env_index, rng)
        try:
            fit = fit_ols(ds, q, rows)
        except NumericalError:
            continue
        samples.append(score_of_fit(fit, kind))
    samples = np.asarray(samples)
    return BootstrapCutoff(q, float(scores[q]), samples, alpha_pred, quantile_lower(samples, alpha_pred))


def filter_optimal(
    scores: Mapping[tuple[int, ...], float],
    c_pred: float,
    best_set: tuple[int, ...] | None = None,
) -> list[tuple[int, ...]]:
    """Sets scoring at least ``c_pred``; ``best_set`` is always kept."""
    keep = [s for s, v in scores.items() if v >= c_pred]
    if best_set is not None and best_set not in keep:
        keep.append(best_set)
    return sorted(keep, key=lambda s: (len(s), s))
