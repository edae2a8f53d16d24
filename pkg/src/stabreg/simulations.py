"""Random linear SCM designs with shifted training and test environments.

Each generator returns ``(train, test, truth, scm)``: datasets labelled
``train_k`` and ``test_k``, the blanket sets of the response and the SCM.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from stabreg._random import make_rng
from stabreg.dataset import MultiEnvDataset
from stabreg.exceptions import ValidationError
from stabreg.scm import BlanketTruth, LinearSCM, _mixing, blankets, sample_data


@dataclass(frozen=True)
class SimDesign:
    """Parameters of a simulation design.

    ``d`` counts all variables including the response. ``edge_prob=None``
    in ``sim2`` means ``2 / (d - 1)``.
    """

    kind: str = "sim1"
    d: int = 11
    n_per_env: int = 250
    n_train_env: int = 5
    n_test_env: int = 10
    train_shift_range: tuple[float, float] = (-1.0, 1.0)
    test_shift_range: tuple[float, float] = (-10.0, 10.0)
    noise_var: float = 0.25
    edge_weight_range: tuple[float, float] = (0.5, 1.5)
    n_intervened: int = 4
    max_parents: int = 4
    edge_prob: float | None = None
    child_intervention_prob: float = 0.9

    def __post_init__(self):
        if self.kind not in ("sim1", "sim2"):
            raise ValidationError(f"unknown design kind {self.kind!r}")
        for name in ("train_shift_range", "test_shift_range", "edge_weight_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValidationError(f"{name} must satisfy low < high")
        if self.edge_weight_range[0] < 0:
            raise ValidationError("edge_weight_range holds magnitudes and must be nonnegative")
        if self.d < 2 or self.n_per_env < 2 or self.n_train_env < 1 or self.n_test_env < 1:
            raise ValidationError("d, n_per_env and environment counts are too small")
        if self.noise_var <= 0:
            raise ValidationError("noise_var must be positive")
        if self.kind == "sim1" and not 0 <= self.n_intervened <= self.d - 1:
            raise ValidationError("n_intervened must lie in [0, d - 1]")
        for name in ("edge_prob", "child_intervention_prob"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 1:
                raise ValidationError(f"{name} must lie in [0, 1]")


def sim1_design(**overrides) -> SimDesign:
    return replace(SimDesign(), **overrides)


def sim2_design(d: int = 201, **overrides) -> SimDesign:
    """High-dimensional design; the full-size version uses ``d=1001``."""
    return replace(SimDesign(kind="sim2", d=d, n_per_env=100), **overrides)


def _weights(rng: np.random.Generator, size, lo: float, hi: float) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=size) * rng.uniform(lo, hi, size=size)


def _relabel(adj_w: np.ndarray, response: int) -> tuple[np.ndarray, dict[int, int]]:
    """Move ``response`` to node 0, keeping the other nodes in index order."""
    p = adj_w.shape[0]
    perm = [response] + [i for i in range(p) if i != response]
    return adj_w[np.ix_(perm, perm)], {old: new for new, old in enumerate(perm)}


def _datasets(scm: LinearSCM, design: SimDesign, rng: np.random.Generator, n_per_env: int):
    m = len(scm.targets)
    train_shift = rng.uniform(*design.train_shift_range, size=(design.n_train_env, m))
    test_shift = rng.uniform(*design.test_shift_range, size=(design.n_test_env, m))
    A = _mixing(scm)
    s_train, s_test = (int(v) for v in rng.integers(0, 2**62, size=2))
    train = sample_data(scm, train_shift, n_per_env, s_train,
                        [f"train_{k}" for k in range(design.n_train_env)], mixing=A)
    test = sample_data(scm, test_shift, n_per_env, s_test,
                       [f"test_{k}" for k in range(design.n_test_env)], mixing=A)
    return train, test


def gen_sim1(design: SimDesign | None = None, rng_seed: int = 0):
    """Low-dimensional design with a bounded number of parents per node.

    A random causal order is drawn; each variable takes a uniform number
    of parents in ``{0, ..., max_parents}`` (capped by the number of
    earlier variables) from the variables before it. A random node becomes
    the response and ``n_intervened`` of the others receive mean shifts.
    """
    design = design or sim1_design()
    if design.kind != "sim1":
        raise ValidationError("gen_sim1 needs a sim1 design")
    rng = make_rng(rng_seed)
    p = design.d
    order = rng.permutation(p)
    W = np.zeros((p, p))
    for pos in range(1, p):
        node = order[pos]
        k = min(int(rng.integers(0, design.max_parents + 1)), pos)
        pars = rng.choice(order[:pos], size=k, replace=False)
        W[node, pars] = _weights(rng, k, *design.edge_weight_range)
    response = int(rng.integers(p))
    B, _ = _relabel(W, response)
    targets = tuple(int(t) for t in rng.choice(np.arange(1, p), size=design.n_intervened, replace=False))
    scm = LinearSCM(B, np.full(p, design.noise_var), targets)
    train, test = _datasets(scm, design, rng, design.n_per_env)
    return train, test, blankets(scm), scm


def gen_sim2(design: SimDesign | None = None, rng_seed: int = 0):
    """Sparse high-dimensional design.

    Every pair of variables is joined with probability ``edge_prob``
    (oriented along a random causal order), the response is the first
    variable of that order, and each child of the response is shifted
    with probability ``child_intervention_prob``.
    """
    design = design or sim2_design()
    if design.kind != "sim2":
        raise ValidationError("gen_sim2 needs a sim2 design")
    rng = make_rng(rng_seed)
    p = design.d
    prob = design.edge_prob if design.edge_prob is not None else 2.0 / (p - 1)
    order = rng.permutation(p)
    # upper triangle in causal-order coordinates: earlier -> later
    mask = np.triu(rng.random((p, p)) < prob, k=1)
    src, dst = np.nonzero(mask)
    W = np.zeros((p, p))
    W[order[dst], order[src]] = _weights(rng, len(src), *design.edge_weight_range)
    response = int(order[0])
    B, _ = _relabel(W, response)
    children = np.flatnonzero(B[:, 0])
    hit = rng.random(len(children)) < design.child_intervention_prob
    scm = LinearSCM(B, np.full(p, design.noise_var), tuple(int(c) for c in children[hit]))
    train, test = _datasets(scm, design, rng, design.n_per_env)
    return train, test, blankets(scm), scm


def toy_scm(case: str = "i") -> LinearSCM:
    """Response with one parent ``X1``, a shifted child ``X2`` and (case ii) an unshifted child ``X3``."""
    if case not in ("i", "ii"):
        raise ValidationError("case must be 'i' or 'ii'")
    p = 3 if case == "i" else 4
    B = np.zeros((p, p))
    B[0, 1] = 1.0
    B[2, 0] = 1.0
    if case == "ii":
        B[3, 0] = 1.0
    return LinearSCM(B, np.ones(p), (2,))


def gen_toy(
    case: str = "i",
    shifts=(-2.0, 2.0),
    n_per_env: int = 2000,
    rng_seed: int = 0,
    test_shifts=(-10.0, 10.0),
) -> tuple[MultiEnvDataset, MultiEnvDataset, BlanketTruth, LinearSCM]:
    """Three- or four-node toy model; the shift on ``X2`` is constant within an environment."""
    scm = toy_scm(case)
    rng = make_rng(rng_seed)
    s1, s2 = (int(v) for v in rng.integers(0, 2**62, size=2))
    tr = np.asarray(shifts, dtype=float).reshape(-1, 1)
    te = np.asarray(test_shifts, dtype=float).reshape(-1, 1)
    train = sample_data(scm, tr, n_per_env, s1, [f"train_{k}" for k in range(len(tr))])
    test = sample_data(scm, te, n_per_env, s2, [f"test_{k}" for k in range(len(te))])
    return train, test, blankets(scm), scm


def random_scm(
    rng_seed: int,
    d: int,
    edge_prob: float = 0.4,
    n_targets: int | None = None,
    weight_range: tuple[float, float] = (0.5, 1.5),
    noise_var_range: tuple[float, float] = (0.25, 2.0),
    require_intervened_child: bool = False,
) -> LinearSCM:
    """Random acyclic SCM with ``d`` predictors for oracle checks.

    The response sits at a random position of a random causal order. With
    ``require_intervened_child`` the response gets at least one child and
    one of its children is always among the targets.
    """
    rng = make_rng(rng_seed)
    p = d + 1
    n_targets = int(rng.integers(0, d + 1)) if n_targets is None else n_targets
    for _ in range(1000):
        order = rng.permutation(p)
        mask = np.triu(rng.random((p, p)) < edge_prob, k=1)
        src, dst = np.nonzero(mask)
        W = np.zeros((p, p))
        W[order[dst], order[src]] = _weights(rng, len(src), *weight_range)
        response = int(rng.integers(p))
        B, _ = _relabel(W, response)
        children = np.flatnonzero(B[:, 0])
        if require_intervened_child and len(children) == 0:
            continue
        targets = set(int(t) for t in rng.choice(np.arange(1, p), size=min(n_targets, d), replace=False))
        if require_intervened_child and not targets & set(int(c) for c in children):
            targets.add(int(rng.choice(children)))
        nv = rng.uniform(*noise_var_range, size=p)
        return LinearSCM(B, nv, tuple(sorted(targets)))
    raise ValidationError("could not draw an SCM meeting the requirements")
