import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stabreg.dataset import (
    MultiEnvDataset,
    bootstrap_within_env,
    load_csv,
    split_by_env,
    subsample_half,
    write_csv,
)
from stabreg.exceptions import InputError, ValidationError


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_small_file(tmp_path):
    f = _write(tmp_path / "d.csv", "env,y,a,b\na,1,2,3\na,2,3,4\nb,3,4,5\nb,4,5,6\n")
    ds = load_csv(f, "y", "env")
    assert (ds.n, ds.d, ds.n_envs) == (4, 2, 2)
    assert ds.column_names == ("a", "b")
    assert ds.env_labels == ("a", "b")
    np.testing.assert_array_equal(ds.X[:, 0], [2, 3, 4, 5])


def test_load_respects_predictor_order(tmp_path):
    f = _write(tmp_path / "d.csv", "a,b,y,env\n1,2,3,x\n4,5,6,x\n")
    ds = load_csv(f, "y", "env", ["b", "a"])
    np.testing.assert_array_equal(ds.X, [[2, 1], [5, 4]])


def test_singleton_environment_rejected(tmp_path):
    f = _write(tmp_path / "d.csv", "env,y,a\na,1,2\na,2,3\nb,3,4\n")
    with pytest.raises(ValidationError, match="'b'"):
        load_csv(f, "y", "env")


def test_missing_column_named(tmp_path):
    f = _write(tmp_path / "d.csv", "env,y,a\na,1,2\na,2,3\n")
    with pytest.raises(InputError, match="'zz'"):
        load_csv(f, "zz", "env")


def test_unparseable_cell_has_coordinates(tmp_path):
    f = _write(tmp_path / "d.csv", "env,y,a\na,1,2\na,oops,3\n")
    with pytest.raises(InputError, match=r"row 3, column 'y'"):
        load_csv(f, "y", "env")


def test_nonfinite_rejected(tmp_path):
    f = _write(tmp_path / "d.csv", "env,y,a\na,1,nan\na,2,3\n")
    with pytest.raises(InputError):
        load_csv(f, "y", "env")


@settings(max_examples=30, deadline=None)
@given(
    n_envs=st.integers(1, 4),
    n_per=st.integers(2, 6),
    d=st.integers(0, 4),
    seed=st.integers(0, 2**31),
)
def test_csv_round_trip(tmp_path_factory, n_envs, n_per, d, seed):
    rng = np.random.default_rng(seed)
    n = n_envs * n_per
    X = rng.normal(size=(n, d)) * 10.0 ** rng.integers(-8, 8, size=(n, d))
    y = rng.standard_cauchy(n)
    env = rng.permutation(np.repeat([f"env {k}" for k in range(n_envs)], n_per))
    ds = MultiEnvDataset(X, y, env)
    path = tmp_path_factory.mktemp("rt") / "x.csv"
    write_csv(ds, path)
    back = load_csv(path, "y", "env")
    np.testing.assert_allclose(back.X, ds.X, rtol=1e-12, atol=0)
    np.testing.assert_allclose(back.y, ds.y, rtol=1e-12, atol=0)
    assert list(back.env) == list(ds.env)


def test_dataset_invariants():
    with pytest.raises(ValidationError):
        MultiEnvDataset(np.zeros((3, 1)), np.zeros(2), ["a"] * 3)
    with pytest.raises(ValidationError):
        MultiEnvDataset(np.array([[np.inf], [0.0]]), np.zeros(2), ["a"] * 2)
    ds = MultiEnvDataset(np.zeros((2, 1)), np.zeros(2), ["a"] * 2)
    with pytest.raises(ValueError):
        ds.X[0, 0] = 1.0


def test_split_by_env_examples():
    ds = MultiEnvDataset(np.zeros((4, 1)), np.zeros(4), ["a", "b", "a", "b"])
    idx = split_by_env(ds)
    assert idx.labels == ("a", "b")
    assert [list(r) for r in idx.row_sets] == [[0, 2], [1, 3]]
    one = MultiEnvDataset(np.zeros((5, 1)), np.zeros(5), ["z"] * 5)
    assert [list(r) for r in split_by_env(one).row_sets] == [[0, 1, 2, 3, 4]]


def test_split_partition_random(rng):
    labels = rng.choice(list("abcdefg"), size=1000)
    ds = MultiEnvDataset(np.zeros((1000, 1)), np.zeros(1000), labels)
    idx = split_by_env(ds)
    assert sum(idx.sizes) == 1000
    allrows = np.concatenate(idx.row_sets)
    assert len(set(allrows.tolist())) == 1000
    for lab, rows in zip(idx.labels, idx.row_sets):
        assert np.all(labels[rows] == lab)


def _tagged(sizes):
    env = np.concatenate([[f"e{k}"] * s for k, s in enumerate(sizes)])
    n = len(env)
    return MultiEnvDataset(np.arange(n, dtype=float)[:, None], np.arange(n, dtype=float), env)


def test_bootstrap_sizes_and_labels():
    ds = _tagged([3, 5])
    bs = bootstrap_within_env(ds, 7)
    assert bs.env_index.sizes == (3, 5)
    # the row id is stored in y, so label consistency is checkable
    orig_label = ds.env[bs.y.astype(int)]
    assert np.all(orig_label == bs.env)


def test_bootstrap_deterministic():
    ds = _tagged([3, 5])
    a, b = bootstrap_within_env(ds, 11), bootstrap_within_env(ds, 11)
    np.testing.assert_array_equal(a.y, b.y)


def test_bootstrap_uniform_frequency():
    ds = _tagged([3, 4])
    counts = np.zeros(3)
    for s in range(10000):
        bs = bootstrap_within_env(ds, s)
        rows = bs.y[bs.env == "e0"].astype(int)
        counts += np.bincount(rows, minlength=3)
    freq = counts / counts.sum()
    np.testing.assert_allclose(freq, 1 / 3, atol=0.02)


def test_subsample_half_sizes_labels_determinism():
    ds = _tagged([4, 9])
    sub = subsample_half(ds, 3)
    assert sub.env_index.sizes == (2, 4)
    assert len(set(sub.y.tolist())) == sub.n
    assert np.all(ds.env[sub.y.astype(int)] == sub.env)
    np.testing.assert_array_equal(sub.y, subsample_half(ds, 3).y)


def test_subsample_half_small_env_rejected():
    with pytest.raises(ValidationError):
        subsample_half(_tagged([3, 8]), 0)


def test_subsample_half_uniform():
    ds = _tagged([4, 4])
    counts = np.zeros(4)
    reps = 5000
    for s in range(reps):
        sub = subsample_half(ds, s)
        counts += np.bincount(sub.y[sub.env == "e0"].astype(int), minlength=4)
    np.testing.assert_allclose(counts / reps, 0.5, atol=0.03)
