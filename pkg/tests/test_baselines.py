import numpy as np
import pytest

from stabreg.baselines import (
    IV_GAMMA,
    anchor_projection,
    anchor_transform,
    cv_anchor_gamma,
    env_mean_component,
    fit_anchor,
    fit_cv_lasso,
    fit_iv,
    fit_pooled_ols,
)
from stabreg.dataset import MultiEnvDataset
from stabreg.exceptions import ValidationError
from stabreg.simulations import gen_sim1, gen_toy

from conftest import linear_envs


def test_pooled_ols_normal_equations(rng):
    ds = linear_envs(rng, beta=(1.0, -2.0, 0.5))
    m = fit_pooled_ols(ds)
    A = np.column_stack([np.ones(ds.n), ds.X])
    sol = np.linalg.solve(A.T @ A, A.T @ ds.y)
    np.testing.assert_allclose([m.intercept, *m.coefs], sol, atol=1e-10)
    np.testing.assert_allclose(m.importance, np.abs(m.coefs) * ds.X.std(axis=0))


def test_gamma_one_is_pooled_ols(rng):
    ds = linear_envs(rng, n_envs=3, beta=(1.0, -0.3), shift=1.5)
    np.testing.assert_allclose(fit_anchor(ds, 1.0).coefs, fit_pooled_ols(ds).coefs, atol=1e-8)
    t = anchor_transform(ds, 1.0)
    np.testing.assert_array_equal(t.X, ds.X)


def test_projector_and_mean_component(rng):
    ds = linear_envs(rng, n_per_env=20, n_envs=3)
    P = anchor_projection(ds)
    np.testing.assert_allclose(P @ P, P, atol=1e-10)
    np.testing.assert_allclose(P, P.T, atol=1e-12)
    np.testing.assert_allclose(P @ ds.X, env_mean_component(ds, ds.X), atol=1e-10)
    np.testing.assert_allclose(P @ ds.y, env_mean_component(ds, ds.y), atol=1e-10)
    for gamma in (0.25, 4.0):
        T = np.eye(ds.n) - (1 - np.sqrt(gamma)) * P
        np.testing.assert_allclose(anchor_transform(ds, gamma).X, T @ ds.X, atol=1e-10)


def test_large_gamma_removes_shifted_child():
    train, _, _, _ = gen_toy("i", shifts=(-2, 2), n_per_env=10_000, rng_seed=1)
    assert abs(fit_anchor(train, 1e6).coefs[1]) < 0.05


def test_residual_env_component_nonincreasing():
    for seed in range(10):
        train, _, _, _ = gen_sim1(rng_seed=seed)
        vals = []
        for gamma in (1, 10, 100, 1000):
            m = fit_anchor(train, gamma)
            r = train.y - m.predict(train.X)
            vals.append(np.sum(env_mean_component(train, r) ** 2))
        assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))


def test_iv_equals_anchor_at_fixed_gamma(rng):
    ds = linear_envs(rng, n_envs=3, shift=1.0)
    iv, an = fit_iv(ds), fit_anchor(ds, IV_GAMMA)
    np.testing.assert_array_equal(iv.coefs, an.coefs)
    assert iv.intercept == an.intercept and iv.gamma == IV_GAMMA


def test_iv_on_toy_shrinks_child_and_ranks_parent():
    first = 0
    for seed in range(30):
        train, _, _, _ = gen_toy("i", n_per_env=500, rng_seed=seed)
        iv, ols = fit_iv(train), fit_pooled_ols(train)
        assert abs(iv.coefs[1]) < abs(ols.coefs[1])
        first += iv.importance[0] > iv.importance[1]
    assert first >= 0.9 * 30


def test_iv_downranks_nonstable_blanket():
    diffs = []
    for seed in range(40):
        train, _, truth, _ = gen_sim1(rng_seed=seed)
        if not truth.nsb:
            continue
        ranks = {}
        for name, m in (("iv", fit_iv(train)), ("ols", fit_pooled_ols(train))):
            order = np.argsort(-m.importance)
            r = np.empty(train.d)
            r[order] = np.arange(train.d)
            ranks[name] = np.mean(r[truth.columns("nsb")])
        diffs.append(ranks["iv"] - ranks["ols"])
    assert np.mean(diffs) > 0


def test_cv_gamma_single_candidate_and_determinism(rng):
    ds = linear_envs(rng, n_envs=3, shift=1.0)
    assert cv_anchor_gamma(ds, [3.0]).gamma == 3.0
    a = cv_anchor_gamma(ds, rng_seed=1)
    b = cv_anchor_gamma(ds, rng_seed=1)
    np.testing.assert_array_equal(a.coefs, b.coefs)
    la = cv_anchor_gamma(ds, [1.0, 10.0], use_lasso=True)
    assert la.method == "anchor_lasso" and la.gamma in (1.0, 10.0)


def test_cv_gamma_homogeneous_close_to_ols():
    rng = np.random.default_rng(9)
    ds = linear_envs(rng, n_per_env=1000, n_envs=5, beta=(1.0, -1.0, 0.5))
    for criterion in ("worst", "mean"):
        m = cv_anchor_gamma(ds, criterion=criterion)
        assert np.max(np.abs(m.coefs - fit_pooled_ols(ds).coefs)) < 0.05


def test_baseline_errors(rng):
    one = MultiEnvDataset(rng.normal(size=(20, 2)), rng.normal(size=20), ["a"] * 20)
    ds = linear_envs(rng)
    with pytest.raises(ValidationError):
        fit_anchor(one, 2.0)
    with pytest.raises(ValidationError):
        anchor_transform(ds, 0.0)
    for bad in (dict(gamma_grid=[]), dict(gamma_grid=[-1.0]), dict(criterion="median")):
        with pytest.raises(ValidationError):
            cv_anchor_gamma(ds, **bad)


def test_cv_lasso_baseline_sparse(rng):
    X = rng.normal(size=(300, 10))
    y = 2 * X[:, 0] + rng.normal(size=300)
    m = fit_cv_lasso(MultiEnvDataset(X, y, np.arange(300) % 3))
    assert np.argmax(m.importance) == 0
    assert m.to_json()["method"] == "lasso"
