"""Tests of whether a predictor subset has the same regression across environments.

Both tests return a p-value that serves as the subset's stability score.
The Chow test compares every pair of environments with an F-test; the
scaled-residual test resamples residual directions exactly under the
null of a shared linear model with Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy import stats

from stabreg._random import make_rng
from stabreg.dataset import MultiEnvDataset
from stabreg.exceptions import SingularDesignError, UnderdeterminedError, ValidationError
from stabreg.linear_model import ols_solve

_RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class StabilityScore:
    """p-value of a stability test for one subset.

    ``detail`` holds per-pair ``(F, df1, df2, p)`` tuples for the Chow test
    and ``{"statistic": T, "resampled": array}`` for the resampling test.
    """

    subset: tuple[int, ...]
    p_value: float
    method: str
    detail: dict = field(default_factory=dict, repr=False)


def _rss(X: np.ndarray, y: np.ndarray, subset) -> float:
    _, _, r = ols_solve(X, y, subset)
    return float(r @ r)


def chow_test(ds: MultiEnvDataset, subset: Sequence[int] = ()) -> StabilityScore:
    """Pairwise Chow F-tests with a Bonferroni combination.

    For environments ``e`` and ``f`` with ``k = |subset| + 1`` parameters,

    ``F = [(RSS_pool - RSS_e - RSS_f) / k] / [(RSS_e + RSS_f) / (n_e + n_f - 2k)]``

    is compared with ``F(k, n_e + n_f - 2k)``. The combined p-value is
    ``min(1, P * min p)`` over the ``P`` pairs.

    Raises
    ------
    ValidationError
        Fewer than two environments.
    UnderdeterminedError
        Some environment has at most ``k`` rows.
    SingularDesignError
        The design is rank deficient within an environment.
    """
    subset = tuple(int(j) for j in subset)
    if ds.n_envs < 2:
        raise ValidationError("chow_test needs at least two environments")
    k = len(subset) + 1
    Xs = ds.X[:, list(subset)]
    rows = ds.env_index.row_sets
    rss = [_rss(Xs[r], ds.y[r], subset) for r in rows]
    pairs = {}
    pmin = 1.0
    for a, b in combinations(range(ds.n_envs), 2):
        df2 = len(rows[a]) + len(rows[b]) - 2 * k
        if df2 <= 0:
            raise UnderdeterminedError(f"subset {subset}: nonpositive denominator degrees of freedom")
        both = np.concatenate([rows[a], rows[b]])
        rss_pool = _rss(Xs[both], ds.y[both], subset)
        num = max(rss_pool - rss[a] - rss[b], 0.0) / k
        den = (rss[a] + rss[b]) / df2
        if num <= 1e-14 * max(rss_pool, 1e-300):
            F, p = 0.0, 1.0
        elif den <= 0.0:
            F, p = np.inf, 0.0
        else:
            F = num / den
            p = float(stats.f.sf(F, k, df2))
        pairs[(ds.env_labels[a], ds.env_labels[b])] = (F, k, df2, p)
        pmin = min(pmin, p)
    p_value = min(1.0, len(pairs) * pmin)
    return StabilityScore(subset, p_value, "chow", {"pairs": pairs})


def _env_indicator(ds: MultiEnvDataset) -> np.ndarray:
    E = np.zeros((ds.n, ds.n_envs))
    E[np.arange(ds.n), ds.env_codes] = 1.0
    return E


def _pair_statistic(env_sums: np.ndarray, sizes: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Sum over environment pairs of absolute differences of mean scaled residuals.

    ``env_sums`` has one row per environment and one column per residual
    vector; ``norms`` holds the residual norms.
    """
    means = env_sums / sizes[:, None] / norms[None, :]
    iu, ju = np.triu_indices(len(sizes), k=1)
    return np.abs(means[iu] - means[ju]).sum(axis=0)


class ResidualResampler:
    """Scaled-residual test with resampling draws shared across subsets.

    The ``n x B`` standard-normal draws are generated once. Projections of
    the draws onto the full design and onto the environment indicators are
    cached, so testing a subset only needs a QR factorization of its
    design and small matrix products.

    Parameters
    ----------
    ds : MultiEnvDataset
    n_resamples : int
        Number of resampled residual directions ``B``.
    rng_seed : int
    draws : array of shape (n, B), optional
        Explicit draws; overrides ``n_resamples`` and ``rng_seed``.
    """

    def __init__(self, ds: MultiEnvDataset, n_resamples: int = 999, rng_seed: int = 0, draws=None):
        if draws is None:
            if n_resamples < 1:
                raise ValidationError("n_resamples must be at least 1")
            draws = make_rng(rng_seed, 0x5EED).standard_normal((ds.n, n_resamples))
        else:
            draws = np.asarray(draws, dtype=float)
            if draws.ndim != 2 or draws.shape[0] != ds.n or draws.shape[1] < 1:
                raise ValidationError("draws must have shape (n, B) with B >= 1")
        if ds.n_envs < 2:
            raise ValidationError("the resampling test needs at least two environments")
        self.ds = ds
        self.B = draws.shape[1]
        self._E = _env_indicator(ds)
        self._sizes = self._E.sum(axis=0)
        self._Z = np.column_stack([np.ones(ds.n), ds.X])
        self._ZtG = self._Z.T @ draws
        self._EtG = self._E.T @ draws
        self._gg = np.einsum("ij,ij->j", draws, draws)

    def test(self, subset: Sequence[int] = ()) -> StabilityScore:
        subset = tuple(int(j) for j in subset)
        ds = self.ds
        k = len(subset) + 1
        if ds.n <= k + ds.n_envs:
            raise UnderdeterminedError(
                f"subset {subset}: need more than {k + ds.n_envs} rows, have {ds.n}"
            )
        cols = [0, *(j + 1 for j in subset)]
        D = self._Z[:, cols]
        q, r = np.linalg.qr(D)
        diag = np.abs(np.diag(r))
        if diag.min() <= _RANK_TOL * np.linalg.norm(D, axis=0).max():
            raise SingularDesignError(subset)
        resid = ds.y - q @ (q.T @ ds.y)
        rnorm = float(np.linalg.norm(resid))
        if rnorm <= 1e-10 * max(1.0, float(np.linalg.norm(ds.y))):
            return StabilityScore(subset, 1.0, "scaled_residual", {"statistic": 0.0, "resampled": np.zeros(0)})
        t_obs = float(_pair_statistic((self._E.T @ resid)[:, None], self._sizes, np.array([rnorm]))[0])
        QtG = np.linalg.solve(r.T, self._ZtG[cols])
        EtR = self._EtG - (self._E.T @ q) @ QtG
        norms = np.sqrt(np.maximum(self._gg - np.einsum("ij,ij->j", QtG, QtG), 1e-300))
        t_star = _pair_statistic(EtR, self._sizes, norms)
        # relative slack so that exact ties are not lost to rounding
        count = int(np.count_nonzero(t_star >= t_obs * (1 - 1e-10)))
        p = (1 + count) / (self.B + 1)
        return StabilityScore(subset, p, "scaled_residual", {"statistic": t_obs, "resampled": t_star})


def scaled_residual_test(
    ds: MultiEnvDataset,
    subset: Sequence[int] = (),
    n_resamples: int = 999,
    rng_seed: int = 0,
    draws=None,
) -> StabilityScore:
    """Exact resampling test based on scaled pooled residuals.

    The pooled OLS residual ``r`` of ``y`` on the subset (with intercept)
    is scaled to ``u = r / ||r||``. The statistic is the sum over
    environment pairs of ``|mean_e(u) - mean_f(u)|``. Under a shared
    Gaussian linear model ``u`` is uniform on the unit sphere of the
    residual space, so resamples ``(I - H) g / ||(I - H) g||`` with
    standard-normal ``g`` reproduce its null distribution. The p-value is
    ``(1 + #{T* >= T}) / (B + 1)``; a zero residual vector gives 1.
    """
    return ResidualResampler(ds, n_resamples, rng_seed, draws).test(subset)
