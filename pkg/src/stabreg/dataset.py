"""Multi-environment regression data.

A :class:`MultiEnvDataset` holds a predictor matrix, a response vector and
one environment label per row. Labels are opaque strings; the environment
order is the order of first appearance in the rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from stabreg._random import make_rng
from stabreg.exceptions import InputError, ValidationError


@dataclass(frozen=True)
class EnvIndex:
    """Partition of row indices by environment."""

    labels: tuple[str, ...]
    row_sets: tuple[np.ndarray, ...]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(r) for r in self.row_sets)

    def rows(self, label: str) -> np.ndarray:
        return self.row_sets[self.labels.index(label)]

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class MultiEnvDataset:
    """Observations ``(X, y)`` partitioned by environment label.

    Parameters
    ----------
    X : array of shape (n, d)
        Predictor values.
    y : array of shape (n,)
        Responses.
    env : sequence of length n
        Environment label of each row; converted to ``str``.
    column_names : sequence of str, optional
        Predictor names, defaults to ``X1..Xd``.

    The arrays are copied and made read-only, so instances can be shared
    freely between threads and processes.
    """

    X: np.ndarray
    y: np.ndarray
    env: np.ndarray
    column_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.array(self.y, dtype=float, copy=True).reshape(-1)
        env = np.array([str(e) for e in np.asarray(self.env).reshape(-1)], dtype=object)
        if X.ndim != 2:
            raise ValidationError("X must be a 2-dimensional array")
        n, d = X.shape
        if len(y) != n or len(env) != n:
            raise ValidationError(
                f"row counts differ: X has {n}, y has {len(y)}, env has {len(env)}"
            )
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValidationError("X and y must not contain non-finite values")
        names = tuple(self.column_names) or tuple(f"X{j + 1}" for j in range(d))
        if len(names) != d:
            raise ValidationError(f"expected {d} column names, got {len(names)}")
        X.setflags(write=False)
        y.setflags(write=False)
        env.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "env", env)
        object.__setattr__(self, "column_names", tuple(str(c) for c in names))
        for label, size in zip(self.env_index.labels, self.env_index.sizes):
            if size < 2:
                raise ValidationError(
                    f"environment {label!r} has {size} observation(s); at least 2 required"
                )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @cached_property
    def env_index(self) -> EnvIndex:
        return split_by_env(self)

    @property
    def env_labels(self) -> tuple[str, ...]:
        return self.env_index.labels

    @property
    def n_envs(self) -> int:
        return len(self.env_index)

    @cached_property
    def env_codes(self) -> np.ndarray:
        """Integer code of each row's environment (position in ``env_labels``)."""
        codes = np.empty(self.n, dtype=np.intp)
        for k, rows in enumerate(self.env_index.row_sets):
            codes[rows] = k
        codes.setflags(write=False)
        return codes

    def take(self, rows) -> "MultiEnvDataset":
        """Return the dataset restricted to ``rows`` (in the given order)."""
        rows = np.asarray(rows, dtype=np.intp)
        return MultiEnvDataset(self.X[rows], self.y[rows], self.env[rows], self.column_names)

    def __repr__(self) -> str:
        return f"MultiEnvDataset(n={self.n}, d={self.d}, envs={list(self.env_labels)})"


def split_by_env(ds: MultiEnvDataset) -> EnvIndex:
    """Group row indices by environment, labels in order of first appearance."""
    labels, first, inverse = np.unique(ds.env.astype(str), return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    row_sets = []
    for k in order:
        rows = np.flatnonzero(inverse == k)
        rows.setflags(write=False)
        row_sets.append(rows)
    return EnvIndex(tuple(str(labels[k]) for k in order), tuple(row_sets))


def bootstrap_indices(index: EnvIndex, rng: np.random.Generator) -> np.ndarray:
    """Row indices of a bootstrap sample drawn with replacement within each environment."""
    parts = [rows[rng.integers(0, len(rows), size=len(rows))] for rows in index.row_sets]
    return np.concatenate(parts)


def bootstrap_within_env(ds: MultiEnvDataset, rng_seed: int) -> MultiEnvDataset:
    """Stratified bootstrap resample; every environment keeps its size."""
    return ds.take(bootstrap_indices(ds.env_index, make_rng(rng_seed)))


def subsample_half_indices(index: EnvIndex, rng: np.random.Generator) -> np.ndarray:
    parts = []
    for label, rows in zip(index.labels, index.row_sets):
        if len(rows) < 4:
            raise ValidationError(
                f"environment {label!r} has {len(rows)} rows; half-subsampling needs at least 4"
            )
        parts.append(np.sort(rng.choice(rows, size=len(rows) // 2, replace=False)))
    return np.concatenate(parts)


def subsample_half(ds: MultiEnvDataset, rng_seed: int) -> MultiEnvDataset:
    """Draw floor(n_e / 2) rows without replacement from every environment."""
    return ds.take(subsample_half_indices(ds.env_index, make_rng(rng_seed)))


def load_csv(
    path,
    response_col: str,
    env_col: str,
    predictor_cols: Sequence[str] | None = None,
) -> MultiEnvDataset:
    """Read a dataset from a CSV file with a header row.

    Predictors default to every column other than the response and
    environment columns, in file order.

    Raises
    ------
    InputError
        A named column is missing or a numeric cell does not parse.
    ValidationError
        The parsed data violate a dataset invariant (e.g. an environment
        with a single row).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        rows = list(reader)
    for col in [response_col, env_col, *(predictor_cols or [])]:
        if col not in header:
            raise InputError(f"{path}: column {col!r} not found")
    if predictor_cols is None:
        predictor_cols = [h for h in header if h not in (response_col, env_col)]
    pos = {h: i for i, h in enumerate(header)}
    numeric = [response_col, *predictor_cols]
    values = np.empty((len(rows), len(numeric)))
    env = []
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise InputError(
                f"{path}: row {r + 2} has {len(row)} fields, header has {len(header)}"
            )
        for c, col in enumerate(numeric):
            cell = row[pos[col]].strip()
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{path}: row {r + 2}, column {col!r}: cannot parse {cell!r}") from None
            if not np.isfinite(v):
                raise InputError(f"{path}: row {r + 2}, column {col!r}: non-finite value {cell!r}")
            values[r, c] = v
        env.append(row[pos[env_col]])
    return MultiEnvDataset(values[:, 1:], values[:, 0], env, tuple(predictor_cols))


def write_csv(ds: MultiEnvDataset, path, response_col: str = "y", env_col: str = "env") -> None:
    """Write ``ds`` as CSV; floats use ``repr`` so they round-trip exactly."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([env_col, response_col, *ds.column_names])
        for i in range(ds.n):
            writer.writerow([ds.env[i], repr(float(ds.y[i])), *(repr(float(v)) for v in ds.X[i])])
