import json
from itertools import combinations

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stabreg.exceptions import ValidationError
from stabreg.schemas import SCM
from stabreg.scm import (
    LinearSCM,
    blankets,
    d_separated,
    intervention_stable,
    mixture_moments,
    population_cov,
    population_ols_direct,
    population_ols_lemma1,
    population_regression,
    sample_data,
    stable_blanket_definitional,
    strong_intervention_limit_check,
    strong_limit_applies,
)
from stabreg.simulations import random_scm, toy_scm


def _dag(rng, n, p=0.35):
    order = rng.permutation(n)
    parents = [set() for _ in range(n)]
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < p:
                parents[order[b]].add(int(order[a]))
    return parents


def _d_sep_paths(parents, a, b, cond):
    """Path-enumeration oracle: no simple path between a and b is active."""
    n = len(parents)
    children = [{i for i in range(n) if v in parents[i]} for v in range(n)]
    desc = []
    for v in range(n):
        out, stack = {v}, [v]
        while stack:
            for c in children[stack.pop()]:
                if c not in out:
                    out.add(c)
                    stack.append(c)
        desc.append(out)

    def active(path):
        for k in range(1, len(path) - 1):
            u, v, w = path[k - 1], path[k], path[k + 1]
            collider = u in parents[v] and w in parents[v]
            if collider and not desc[v] & cond:
                return False
            if not collider and v in cond:
                return False
        return True

    def walk(path):
        v = path[-1]
        if v == b:
            return active(path)
        return any(walk(path + [u]) for u in parents[v] | children[v] if u not in path)

    return not walk([a])


def test_d_separation_textbook():
    chain = [set(), {0}, {1}]
    assert d_separated(chain, 0, 2, {1})
    assert not d_separated(chain, 0, 2)
    collider = [set(), {0, 2}, set()]
    assert not d_separated(collider, 0, 2, {1})
    assert d_separated(collider, 0, 2)
    with pytest.raises(ValidationError):
        d_separated(chain, 0, 2, {0})


def test_d_separation_vs_path_enumeration():
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(500):
        n = int(rng.integers(3, 9))
        g = _dag(rng, n)
        a, b = (int(v) for v in rng.choice(n, 2, replace=False))
        rest = [v for v in range(n) if v not in (a, b)]
        cond = {v for v in rest if rng.random() < 0.3}
        assert d_separated(g, a, b, cond) == _d_sep_paths(g, a, b, cond)
        checked += 1
    assert checked == 500


def test_sample_data_independent_columns():
    scm = LinearSCM(np.zeros((3, 3)), np.ones(3))
    ds = sample_data(scm, np.zeros((1, 0)), 10_000, rng_seed=1)
    np.testing.assert_allclose(ds.X.var(axis=0), 1, atol=0.05)
    assert ds.y.var() == pytest.approx(1, abs=0.05)


def test_sample_data_chain_variance():
    B = np.zeros((2, 2))
    B[0, 1] = 1.0
    ds = sample_data(LinearSCM(B, [0.25, 0.25]), np.zeros((1, 0)), 20_000, rng_seed=2)
    assert ds.y.var() == pytest.approx(0.5, rel=0.05)


def test_population_cov_hand_and_monte_carlo():
    B = np.zeros((2, 2))
    B[0, 1] = 2.0
    cov, mean = population_cov(LinearSCM(B, [1.0, 0.5], (1,)), [3.0])
    np.testing.assert_allclose(cov, [[1 + 4 * 0.5, 2 * 0.5], [2 * 0.5, 0.5]])
    np.testing.assert_allclose(mean, [6.0, 3.0])
    np.testing.assert_allclose(population_cov(LinearSCM(np.zeros((3, 3)), [1, 2, 3]))[0], np.diag([1, 2, 3]))

    scm = random_scm(5, 4)
    cov, _ = population_cov(scm)
    ds = sample_data(scm, np.zeros((1, len(scm.targets))), 1_000_000, rng_seed=3)
    emp = np.cov(np.column_stack([ds.y, ds.X]).T)
    assert np.max(np.abs(emp - cov)) <= 0.01 * np.max(np.abs(cov))


def test_toy_covariance_matches_population():
    scm = toy_scm("i")
    ds = sample_data(scm, [[2.0]], 100_000, rng_seed=4)
    cov, _ = population_cov(scm, [2.0])
    assert np.cov(ds.X[:, 1], ds.y)[0, 1] == pytest.approx(cov[2, 0], rel=0.02)


@pytest.mark.parametrize("c", [0.0, 1.0, 2.0])
def test_example_formula(c):
    scm = toy_scm("i")
    expected = [(1 + c * c) / (2 + c * c), 1 / (2 + c * c)]
    np.testing.assert_allclose(population_ols_direct(scm, [[c], [-c]]), expected, atol=1e-12)
    np.testing.assert_allclose(population_ols_lemma1(scm, c * c), expected, atol=1e-12)


def test_example_formula_sample():
    scm = toy_scm("i")
    ds = sample_data(scm, [[2.0], [-2.0]], 500_000, rng_seed=5)
    A = np.column_stack([np.ones(ds.n), ds.X])
    beta = np.linalg.lstsq(A, ds.y, rcond=None)[0][1:]
    np.testing.assert_allclose(beta, [5 / 6, 1 / 6], atol=0.01)


def test_closed_form_no_children_equals_parents():
    B = np.zeros((4, 4))
    B[0, 1], B[0, 3], B[2, 1] = 0.7, -1.2, 0.9
    np.testing.assert_array_equal(population_ols_lemma1(LinearSCM(B, [1, 1, 2, 0.5])), B[0, 1:])


def test_closed_form_matches_direct_random():
    for seed in range(200):
        scm = random_scm(seed, int(np.random.default_rng(seed).integers(1, 11)))
        direct = population_ols_direct(scm)
        closed = population_ols_lemma1(scm)
        assert np.max(np.abs(closed - direct)) <= 1e-9 * max(1.0, np.max(np.abs(direct)))
        mb = blankets(scm).mb
        outside = [j - 1 for j in range(1, scm.n_vars) if j not in mb]
        assert np.all(np.abs(direct[outside]) <= 1e-9)


def test_closed_form_with_shift_variance_matches_mixture():
    # all sign patterns of +-s: independent shifts with variance s^2 per target
    from itertools import product

    for seed in range(50):
        scm = random_scm(seed, 5)
        s = 1.7
        shifts = s * np.array(list(product([-1.0, 1.0], repeat=len(scm.targets))))
        np.testing.assert_allclose(population_ols_lemma1(scm, s * s), population_ols_direct(scm, shifts), atol=1e-9)


def _blanket_example_graph():
    # Y=0, X1..X8 = 1..8; targets X5 and X6
    B = np.zeros((9, 9))
    for child, parent in [(0, 1), (0, 2), (3, 0), (5, 0), (5, 4), (1, 6), (2, 6), (7, 1), (7, 4), (8, 7), (8, 4)]:
        B[child, parent] = 1.0
    return LinearSCM(B, np.ones(9), (5, 6))


def test_blankets_blanket_example_graph():
    t = blankets(_blanket_example_graph())
    assert t.pa == {1, 2}
    assert t.sb == {1, 2, 3}
    assert t.mb == {1, 2, 3, 4, 5}
    assert t.nsb == {4, 5}
    assert stable_blanket_definitional(_blanket_example_graph()) == t.sb


def test_blankets_example_cases():
    t = blankets(toy_scm("i"))
    assert (t.pa, t.mb, t.sb, t.nsb) == ({1}, {1, 2}, {1}, {2})
    t = blankets(toy_scm("ii"))
    assert (t.mb, t.sb, t.nsb) == ({1, 2, 3}, {1, 3}, {2})


def test_no_interventions_sb_equals_mb():
    for seed in range(30):
        scm = random_scm(seed, 6, n_targets=0)
        t = blankets(scm)
        assert t.sb == t.mb and not t.nsb


def test_intervention_stable_example():
    scm = toy_scm("i")
    assert intervention_stable(scm, set())
    assert intervention_stable(scm, {1})
    assert not intervention_stable(scm, {1, 2})
    assert not intervention_stable(scm, {2})


def test_blanket_structure_and_definitional_agreement():
    for seed in range(200):
        scm = random_scm(seed, int(np.random.default_rng(seed).integers(1, 9)))
        t = blankets(scm)
        assert t.pa <= t.sb <= t.mb
        assert t.sb <= t.n_int and not (t.sb & t.nsb)
        assert stable_blanket_definitional(scm) == t.sb


def test_stable_sets_generalize():
    for seed in range(40):
        scm = random_scm(seed, int(np.random.default_rng(seed).integers(1, 7)))
        k = len(scm.targets)
        m1 = population_cov(scm, np.full(k, 1.3))
        m2 = population_cov(scm, np.linspace(-2, 2, k))
        preds = range(1, scm.n_vars)
        for r in range(scm.d + 1):
            for S in combinations(preds, r):
                if intervention_stable(scm, S):
                    a0, a = population_regression(*m1, S)
                    b0, b = population_regression(*m2, S)
                    np.testing.assert_allclose(a, b, atol=1e-9)
                    assert a0 == pytest.approx(b0, abs=1e-9)


def test_mixture_moments_two_envs():
    scm = toy_scm("i")
    cov, mean = mixture_moments(scm, [[1.0], [-1.0]])
    base, _ = population_cov(scm)
    np.testing.assert_allclose(mean, 0, atol=1e-15)
    # shift on X2 adds unit variance to X2 only
    np.testing.assert_allclose(cov - base, np.diag([0, 0, 1.0]), atol=1e-12)


def test_strong_limit_example():
    rows = strong_intervention_limit_check(toy_scm("i"), [1, 10, 100])
    for r in rows:
        assert r["coefs"][1] == pytest.approx(1 / (2 + r["sigma"] ** 2), abs=1e-12)
        assert r["max_abs_outside_sb"] == pytest.approx(r["coefs"][1])
    assert rows[-1]["coefs"][0] == pytest.approx(1, abs=1e-3)


def test_strong_limit_condition_characterizes_failures():
    n_ok = 0
    for seed in range(150):
        scm = random_scm(seed, int(np.random.default_rng(seed).integers(2, 9)), require_intervened_child=True)
        rows = strong_intervention_limit_check(scm, [1, 10, 100, 1e4])
        if strong_limit_applies(scm):
            n_ok += 1
            assert rows[-1]["max_abs_outside_sb"] <= 1e-3
        else:
            assert rows[-1]["max_abs_outside_sb"] > 1e-3
    assert n_ok > 100


def test_scm_validation():
    B = np.zeros((2, 2))
    B[0, 1] = B[1, 0] = 1.0
    with pytest.raises(ValidationError):
        LinearSCM(B, [1, 1])
    with pytest.raises(ValidationError):
        LinearSCM(np.zeros((2, 2)), [1, 0])
    with pytest.raises(ValidationError):
        LinearSCM(np.zeros((2, 2)), [1, 1], (0,))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), d=st.integers(1, 8))
def test_scm_json_round_trip(seed, d):
    scm = random_scm(seed, d)
    doc = json.loads(json.dumps(scm.to_json()))
    jsonschema.validate(doc, SCM)
    back = LinearSCM.from_json(doc)
    np.testing.assert_array_equal(back.B, scm.B)
    np.testing.assert_array_equal(back.noise_var, scm.noise_var)
    assert back.targets == scm.targets
    with pytest.raises(ValidationError):
        LinearSCM.from_json(doc | {"version": "x"})
