"""Competing estimators: pooled OLS, cross-validated Lasso, anchor regression and IV.

Anchor regression is fitted through its data transformation: with ``P``
the projection onto the centered environment indicators, both ``X`` and
``y`` are replaced by ``(I - (1 - sqrt(gamma)) P)`` applied to them and
an ordinary (or Lasso) regression is run on the result.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from stabreg.dataset import MultiEnvDataset
from stabreg.exceptions import ValidationError
from stabreg.linear_model import _lasso_path_arrays, cv_lasso, default_lambdas, fit_lasso_path, fit_ols

IV_GAMMA = 1000.0
DEFAULT_GAMMA_GRID = tuple(2.0**k for k in range(-2, 11))


@dataclass(frozen=True, eq=False)
class BaselineModel:
    method: str
    intercept: float
    coefs: np.ndarray
    importance: np.ndarray
    gamma: float | None = None

    def predict(self, Xnew) -> np.ndarray:
        return self.intercept + np.asarray(Xnew, dtype=float) @ self.coefs

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "intercept": float(self.intercept),
            "coefs": [float(c) for c in self.coefs],
            "gamma": None if self.gamma is None else float(self.gamma),
        }


def _scaled_importance(ds: MultiEnvDataset, coefs: np.ndarray) -> np.ndarray:
    return np.abs(coefs) * ds.X.std(axis=0)


def fit_pooled_ols(ds: MultiEnvDataset) -> BaselineModel:
    fit = fit_ols(ds, range(ds.d))
    return BaselineModel("ols", fit.intercept, fit.coefs, _scaled_importance(ds, fit.coefs))


def fit_cv_lasso(ds: MultiEnvDataset, rng_seed: int = 0) -> BaselineModel:
    fit = cv_lasso(ds, rng_seed=rng_seed)
    return BaselineModel("lasso", fit.intercept, fit.coefs, _scaled_importance(ds, fit.coefs))


def env_mean_component(ds: MultiEnvDataset, v: np.ndarray) -> np.ndarray:
    """Projection of ``v`` (rows of ``ds``) onto the centered environment indicators.

    Equals the environment mean of ``v`` minus its grand mean, row by row.
    """
    v = np.asarray(v, dtype=float)
    codes = ds.env_codes
    counts = np.bincount(codes, minlength=ds.n_envs).astype(float)
    if v.ndim == 1:
        means = np.bincount(codes, weights=v, minlength=ds.n_envs) / counts
        return means[codes] - v.mean()
    sums = np.zeros((ds.n_envs, v.shape[1]))
    np.add.at(sums, codes, v)
    return (sums / counts[:, None])[codes] - v.mean(axis=0)


def anchor_projection(ds: MultiEnvDataset) -> np.ndarray:
    """Explicit ``n x n`` projector onto the span of the centered environment indicators."""
    A = np.zeros((ds.n, ds.n_envs))
    A[np.arange(ds.n), ds.env_codes] = 1.0
    A -= A.mean(axis=0)
    return A @ np.linalg.pinv(A)


def anchor_transform(ds: MultiEnvDataset, gamma: float) -> MultiEnvDataset:
    if gamma <= 0:
        raise ValidationError("gamma must be positive")
    shrink = 1.0 - np.sqrt(gamma)
    X = ds.X - shrink * env_mean_component(ds, ds.X)
    y = ds.y - shrink * env_mean_component(ds, ds.y)
    return MultiEnvDataset(X, y, ds.env, ds.column_names)


def _anchor(ds: MultiEnvDataset, gamma: float, use_lasso: bool, rng_seed: int, method: str) -> BaselineModel:
    tds = anchor_transform(ds, gamma)
    if use_lasso:
        fit = cv_lasso(tds, rng_seed=rng_seed)
        b0, coefs = fit.intercept, fit.coefs
    else:
        fit = fit_ols(tds, range(ds.d))
        b0, coefs = fit.intercept, fit.coefs
    return BaselineModel(method, b0, coefs, _scaled_importance(ds, coefs), float(gamma))


def fit_anchor(ds: MultiEnvDataset, gamma: float, use_lasso: bool = False, rng_seed: int = 0) -> BaselineModel:
    """Anchor regression with the environments as anchors.

    ``gamma = 1`` gives pooled regression; large ``gamma`` approaches IV.
    """
    if ds.n_envs < 2:
        raise ValidationError("anchor regression needs at least two environments")
    return _anchor(ds, gamma, use_lasso, rng_seed, "anchor_lasso" if use_lasso else "anchor")


def cv_anchor_gamma(
    ds: MultiEnvDataset,
    gamma_grid=DEFAULT_GAMMA_GRID,
    use_lasso: bool = False,
    rng_seed: int = 0,
    criterion: str = "worst",
) -> BaselineModel:
    """Anchor regression with ``gamma`` chosen by leave-one-environment-out CV.

    ``criterion="worst"`` minimizes the largest held-out MSE across
    folds, ``"mean"`` their average. Ties keep the earlier grid value.
    With ``use_lasso`` the Lasso penalty is tuned by the same folds.
    """
    if ds.n_envs < 2:
        raise ValidationError("anchor regression needs at least two environments")
    if criterion not in ("worst", "mean"):
        raise ValidationError("criterion must be 'worst' or 'mean'")
    grid = [float(g) for g in gamma_grid]
    if not grid:
        raise ValidationError("gamma_grid must be nonempty")
    if any(g <= 0 for g in grid):
        raise ValidationError("gamma values must be positive")
    method = "anchor_lasso" if use_lasso else "anchor"
    if len(grid) == 1 and not use_lasso:
        return _anchor(ds, grid[0], use_lasso, rng_seed, method)
    if use_lasso:
        return _cv_anchor_lasso(ds, grid, criterion)
    errors = np.zeros((len(grid), ds.n_envs))
    for k, rows in enumerate(ds.env_index.row_sets):
        train = ds.take(np.setdiff1d(np.arange(ds.n), rows))
        Xt, yt = ds.X[rows], ds.y[rows]
        for g, gamma in enumerate(grid):
            model = _anchor(train, gamma, False, rng_seed, method)
            errors[g, k] = np.mean((yt - model.predict(Xt)) ** 2)
    agg = errors.max(axis=1) if criterion == "worst" else errors.mean(axis=1)
    return _anchor(ds, grid[int(np.argmin(agg))], False, rng_seed, method)


def _cv_anchor_lasso(ds: MultiEnvDataset, grid: list[float], criterion: str) -> BaselineModel:
    """Choose ``gamma`` and the Lasso penalty jointly by leave-one-environment-out CV.

    For each ``gamma`` the penalty grid comes from the full transformed
    data; one path per held-out environment is fitted on the remaining
    environments and evaluated on the held-out one.
    """
    best = (np.inf, 0, 0)
    paths = {}
    for g, gamma in enumerate(grid):
        lambdas = default_lambdas(anchor_transform(ds, gamma))
        paths[g] = lambdas
        errors = np.zeros((ds.n_envs, len(lambdas)))
        for k, rows in enumerate(ds.env_index.row_sets):
            train = ds.take(np.setdiff1d(np.arange(ds.n), rows))
            tds = anchor_transform(train, gamma) if train.n_envs > 1 else train
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                coefs, b0, _ = _lasso_path_arrays(tds.X, tds.y, lambdas)
            pred = b0[None, :] + ds.X[rows] @ coefs.T
            errors[k] = np.mean((ds.y[rows][:, None] - pred) ** 2, axis=0)
        agg = errors.max(axis=0) if criterion == "worst" else errors.mean(axis=0)
        i = int(np.argmin(agg))
        if agg[i] < best[0]:
            best = (agg[i], g, i)
    _, g, i = best
    gamma = grid[g]
    tds = anchor_transform(ds, gamma)
    fit = fit_lasso_path(tds, paths[g][: i + 1])[-1]
    return BaselineModel("anchor_lasso", fit.intercept, fit.coefs, _scaled_importance(ds, fit.coefs), float(gamma))


def fit_iv(ds: MultiEnvDataset, use_lasso: bool = False, rng_seed: int = 0) -> BaselineModel:
    """Anchor regression at ``gamma = 1000``."""
    model = fit_anchor(ds, IV_GAMMA, use_lasso, rng_seed)
    return BaselineModel("iv_lasso" if use_lasso else "iv", model.intercept, model.coefs, model.importance, IV_GAMMA)
