"""Least squares on predictor subsets and a coordinate-descent Lasso.

Every model includes an intercept. Subset fits use a QR factorization of
the centered design; rank deficiency raises instead of falling back to a
pseudo-inverse.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from stabreg._random import make_rng
from stabreg.dataset import MultiEnvDataset
from stabreg.exceptions import SingularDesignError, UnderdeterminedError, ValidationError

_RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SubsetFit:
    """OLS fit of ``y`` on the columns in ``subset`` (plus intercept).

    ``residuals`` refer to the rows the model was fitted on (``rows``);
    ``env_mse`` maps each environment present in those rows to its mean
    squared residual.
    """

    subset: tuple[int, ...]
    intercept: float
    coefs: np.ndarray
    residuals: np.ndarray
    pooled_mse: float
    env_mse: dict[str, float]
    rows: np.ndarray | None = None

    def full_coefs(self, d: int) -> np.ndarray:
        """Coefficient vector of length ``d`` with zeros outside the subset."""
        beta = np.zeros(d)
        beta[list(self.subset)] = self.coefs
        return beta


def ols_solve(Z: np.ndarray, y: np.ndarray, subset=()) -> tuple[float, np.ndarray, np.ndarray]:
    """Least squares with intercept on the columns of ``Z``.

    Returns ``(intercept, coefs, residuals)``.
    """
    n, k = Z.shape
    if n <= k + 1:
        raise UnderdeterminedError(
            f"subset {tuple(subset)}: {n} rows cannot identify {k + 1} parameters"
        )
    ybar = y.mean()
    if k == 0:
        return float(ybar), np.zeros(0), y - ybar
    zbar = Z.mean(axis=0)
    Zc = Z - zbar
    q, r = np.linalg.qr(Zc)
    diag = np.abs(np.diag(r))
    scale = np.sqrt(n) * np.maximum(Zc.std(axis=0).max(), 1.0)
    if diag.min() <= _RANK_TOL * scale:
        raise SingularDesignError(subset)
    yc = y - ybar
    coefs = np.linalg.solve(r, q.T @ yc)
    resid = yc - Zc @ coefs
    return float(ybar - zbar @ coefs), coefs, resid


def _env_mse(residuals: np.ndarray, codes: np.ndarray, labels: Sequence[str]) -> dict[str, float]:
    sums = np.bincount(codes, weights=residuals**2, minlength=len(labels))
    counts = np.bincount(codes, minlength=len(labels))
    return {lab: float(sums[k] / counts[k]) for k, lab in enumerate(labels) if counts[k] > 0}


def fit_ols(ds: MultiEnvDataset, subset: Sequence[int] = (), rows=None) -> SubsetFit:
    """Fit OLS of ``y`` on ``X[:, subset]`` using ``rows`` (default: all rows).

    An empty subset gives the intercept-only (mean) model.

    Raises
    ------
    UnderdeterminedError
        If the number of rows is at most ``len(subset) + 1``.
    SingularDesignError
        If the centered design on the subset is rank deficient.
    """
    subset = tuple(int(j) for j in subset)
    if any(j < 0 or j >= ds.d for j in subset):
        raise ValidationError(f"subset {subset} out of range for d={ds.d}")
    if rows is None:
        X, y, codes = ds.X, ds.y, ds.env_codes
    else:
        rows = np.asarray(rows, dtype=np.intp)
        X, y, codes = ds.X[rows], ds.y[rows], ds.env_codes[rows]
    intercept, coefs, resid = ols_solve(X[:, list(subset)], y, subset)
    return SubsetFit(
        subset=subset,
        intercept=intercept,
        coefs=coefs,
        residuals=resid,
        pooled_mse=float(np.mean(resid**2)),
        env_mse=_env_mse(resid, codes, ds.env_labels),
        rows=rows,
    )


def fit_ols_per_env(ds: MultiEnvDataset, subset: Sequence[int] = ()) -> list[SubsetFit]:
    """One OLS fit per environment, in ``ds.env_labels`` order."""
    return [fit_ols(ds, subset, rows) for rows in ds.env_index.row_sets]


def predict(fit: SubsetFit, Xnew) -> np.ndarray:
    Xnew = np.asarray(Xnew, dtype=float)
    if Xnew.ndim != 2:
        raise ValidationError("Xnew must be 2-dimensional")
    if fit.subset and Xnew.shape[1] <= max(fit.subset):
        raise ValidationError(
            f"Xnew has {Xnew.shape[1]} columns, fit uses column {max(fit.subset)}"
        )
    if not fit.subset:
        return np.full(Xnew.shape[0], fit.intercept)
    return fit.intercept + Xnew[:, list(fit.subset)] @ fit.coefs


def _residuals(fit: SubsetFit, ds: MultiEnvDataset) -> np.ndarray:
    return ds.y - predict(fit, ds.X)


def mse_pooled(fit: SubsetFit, ds: MultiEnvDataset) -> float:
    return float(np.mean(_residuals(fit, ds) ** 2))


def mse_per_env(fit: SubsetFit, ds: MultiEnvDataset) -> dict[str, float]:
    return _env_mse(_residuals(fit, ds), ds.env_codes, ds.env_labels)


def mse_worst_env(fit: SubsetFit, ds: MultiEnvDataset) -> float:
    return max(mse_per_env(fit, ds).values())


# ---------------------------------------------------------------------------
# Lasso


@dataclass(frozen=True, eq=False)
class LassoFit:
    """Lasso solution on the original predictor scale.

    ``lam`` is the penalty on the standardized problem
    ``(1/2n)||y_c - X_s b||^2 + lam * ||b||_1``.
    """

    lam: float
    intercept: float
    coefs: np.ndarray
    active_set: tuple[int, ...]
    dropped: tuple[int, ...] = ()
    cv_lambdas: np.ndarray | None = field(default=None, repr=False)
    cv_errors: np.ndarray | None = field(default=None, repr=False)

    def predict(self, Xnew) -> np.ndarray:
        return self.intercept + np.asarray(Xnew, dtype=float) @ self.coefs


@numba.njit(cache=True)
def _cd_sweep(gram, grad, beta, lam, idx, n_idx):
    max_delta = 0.0
    d = beta.shape[0]
    for t in range(n_idx):
        j = idx[t]
        gjj = gram[j, j]
        old = beta[j]
        z = grad[j] + gjj * old
        if z > lam:
            new = (z - lam) / gjj
        elif z < -lam:
            new = (z + lam) / gjj
        else:
            new = 0.0
        delta = new - old
        if delta != 0.0:
            beta[j] = new
            for k in range(d):
                grad[k] -= gram[k, j] * delta
            if abs(delta) > max_delta:
                max_delta = abs(delta)
    return max_delta


@numba.njit(cache=True)
def _cd_path(gram, xty, lambdas, tol, max_sweeps):
    # full sweeps alternate with sweeps over the current active set
    d = xty.shape[0]
    beta = np.zeros(d)
    grad = xty.copy()
    out = np.zeros((lambdas.shape[0], d))
    all_idx = np.arange(d)
    active = np.empty(d, dtype=np.int64)
    for li in range(lambdas.shape[0]):
        lam = lambdas[li]
        sweeps = 0
        while sweeps < max_sweeps:
            delta = _cd_sweep(gram, grad, beta, lam, all_idx, d)
            sweeps += 1
            if delta < tol:
                break
            n_act = 0
            for j in range(d):
                if beta[j] != 0.0:
                    active[n_act] = j
                    n_act += 1
            while sweeps < max_sweeps:
                delta = _cd_sweep(gram, grad, beta, lam, active, n_act)
                sweeps += 1
                if delta < tol:
                    break
        out[li] = beta
    return out


@dataclass
class _Standardized:
    keep: np.ndarray
    dropped: tuple[int, ...]
    xbar: np.ndarray
    sd: np.ndarray
    ybar: float
    gram: np.ndarray
    xty: np.ndarray


def _standardize(X: np.ndarray, y: np.ndarray) -> _Standardized:
    n = X.shape[0]
    xbar = X.mean(axis=0)
    sd = X.std(axis=0)
    keep = np.flatnonzero(sd > 1e-12 * np.maximum(1.0, np.abs(xbar)))
    dropped = tuple(int(j) for j in np.setdiff1d(np.arange(X.shape[1]), keep))
    Xs = (X[:, keep] - xbar[keep]) / sd[keep]
    ybar = float(y.mean())
    yc = y - ybar
    return _Standardized(keep, dropped, xbar, sd, ybar, Xs.T @ Xs / n, Xs.T @ yc / n)


def lambda_max(ds: MultiEnvDataset, rows=None) -> float:
    """Smallest penalty at which every standardized coefficient is zero."""
    X, y = (ds.X, ds.y) if rows is None else (ds.X[rows], ds.y[rows])
    st = _standardize(X, y)
    return float(np.max(np.abs(st.xty))) if st.xty.size else 0.0


def default_lambdas(ds: MultiEnvDataset, n_lambdas: int = 100, rows=None) -> np.ndarray:
    """Log-spaced grid from ``lambda_max`` down to a small fraction of it.

    The grid ends at ``1e-3 * lambda_max`` for at most 50 predictors and
    at ``1e-2 * lambda_max`` otherwise, where coordinate descent on
    correlated designs becomes slow near the unpenalized end.
    """
    n = ds.n if rows is None else len(rows)
    lmax = lambda_max(ds, rows)
    ratio = 1e-3 if n > ds.d and ds.d <= 50 else 1e-2
    if lmax <= 0:
        return np.zeros(1)
    return np.geomspace(lmax, lmax * ratio, n_lambdas)


def _lasso_path_arrays(X, y, lambdas, tol=1e-7, max_sweeps=100_000):
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.ndim != 1 or lambdas.size == 0:
        raise ValidationError("lambdas must be a non-empty 1-d sequence")
    if np.any(np.diff(lambdas) > 0):
        raise ValidationError("lambda grid must be non-increasing")
    if np.any(lambdas < 0):
        raise ValidationError("lambdas must be nonnegative")
    st = _standardize(X, y)
    if st.dropped:
        warnings.warn(f"dropping zero-variance predictor columns {st.dropped}", RuntimeWarning, stacklevel=3)
    path_s = _cd_path(st.gram, st.xty, lambdas, tol, max_sweeps)
    d = X.shape[1]
    coefs = np.zeros((len(lambdas), d))
    coefs[:, st.keep] = path_s / st.sd[st.keep]
    intercepts = st.ybar - coefs @ st.xbar
    return coefs, intercepts, st


def fit_lasso_path(ds: MultiEnvDataset, lambdas=None, rows=None, tol: float = 1e-7) -> list[LassoFit]:
    """Coordinate-descent Lasso along a non-increasing penalty grid.

    Predictors are standardized on the fitted rows (zero mean, unit
    variance); returned coefficients are on the original scale. Warm starts
    carry along the path and each penalty stops once the largest
    standardized coefficient change in a sweep is below ``tol``.
    """
    if rows is not None:
        rows = np.asarray(rows, dtype=np.intp)
    if lambdas is None:
        lambdas = default_lambdas(ds, rows=rows)
    X, y = (ds.X, ds.y) if rows is None else (ds.X[rows], ds.y[rows])
    coefs, intercepts, st = _lasso_path_arrays(X, y, lambdas, tol)
    return [
        LassoFit(
            lam=float(lam),
            intercept=float(b0),
            coefs=beta,
            active_set=tuple(int(j) for j in np.flatnonzero(beta)),
            dropped=st.dropped,
        )
        for lam, b0, beta in zip(np.asarray(lambdas, dtype=float), intercepts, coefs)
    ]


def stratified_folds(ds: MultiEnvDataset, k_folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per row; rows of each environment are spread round-robin over folds."""
    fold = np.empty(ds.n, dtype=np.intp)
    offset = 0
    for rows in ds.env_index.row_sets:
        perm = rng.permutation(rows)
        fold[perm] = (offset + np.arange(len(rows))) % k_folds
        offset += len(rows)
    return fold


def cv_lasso(
    ds: MultiEnvDataset,
    k_folds: int = 10,
    rng_seed: int = 0,
    lambdas=None,
    rows=None,
) -> LassoFit:
    """Lasso with the penalty chosen by k-fold cross-validation.

    Folds are stratified by environment. The penalty minimizing mean
    held-out MSE is refitted on all (given) rows.
    """
    if k_folds < 2:
        raise ValidationError("k_folds must be at least 2")
    sub = ds if rows is None else ds.take(rows)
    if lambdas is None:
        lambdas = default_lambdas(sub)
    lambdas = np.asarray(lambdas, dtype=float)
    fold = stratified_folds(sub, k_folds, make_rng(rng_seed))
    errors = np.zeros((k_folds, len(lambdas)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for f in range(k_folds):
            train, test = fold != f, fold == f
            coefs, b0, _ = _lasso_path_arrays(sub.X[train], sub.y[train], lambdas)
            pred = b0[None, :] + sub.X[test] @ coefs.T
            errors[f] = np.mean((sub.y[test][:, None] - pred) ** 2, axis=0)
    mean_err = errors.mean(axis=0)
    best = int(np.argmin(mean_err))
    path = fit_lasso_path(sub, lambdas[: best + 1])
    fit = path[-1]
    return LassoFit(fit.lam, fit.intercept, fit.coefs, fit.active_set, fit.dropped, lambdas, mean_err)


def lasso_objective(ds: MultiEnvDataset, coefs_std: np.ndarray, lam: float) -> float:
    """Standardized Lasso objective at standardized coefficients ``coefs_std``."""
    st = _standardize(ds.X, ds.y)
    Xs = (ds.X[:, st.keep] - st.xbar[st.keep]) / st.sd[st.keep]
    r = (ds.y - st.ybar) - Xs @ coefs_std
    return float(r @ r / (2 * ds.n) + lam * np.abs(coefs_std).sum())


def standardized_coefs(ds: MultiEnvDataset, fit: LassoFit) -> np.ndarray:
    sd = ds.X.std(axis=0)
    return (fit.coefs * sd)[np.setdiff1d(np.arange(ds.d), fit.dropped)]


def lasso_kkt_residual(ds: MultiEnvDataset, fit: LassoFit) -> float:
    """Largest violation of the standardized Lasso optimality conditions."""
    st = _standardize(ds.X, ds.y)
    b = standardized_coefs(ds, fit)
    grad = st.xty - st.gram @ b
    viol = np.where(b != 0, np.abs(grad - fit.lam * np.sign(b)), np.maximum(np.abs(grad) - fit.lam, 0.0))
    return float(viol.max()) if viol.size else 0.0


def soft_threshold(z, lam):
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


