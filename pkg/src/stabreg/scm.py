"""Linear structural causal models with mean-shift interventions.

Node 0 is the response ``Y`` and nodes ``1..d`` are the predictors, so
predictor node ``j`` is dataset column ``j - 1``. The coefficient matrix
follows ``value = B @ value + noise``: ``B[i, j] != 0`` means an edge
``j -> i``. Each intervention target receives its own implicit
intervention node, a source with a single child; these nodes are only
materialized for graph queries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from stabreg._random import make_rng
from stabreg.dataset import MultiEnvDataset
from stabreg.exceptions import NumericalError, ValidationError

SCM_VERSION = "stabreg-scm/1"


@dataclass(frozen=True, eq=False)
class LinearSCM:
    """Linear Gaussian SCM over ``(Y, X^1, ..., X^d)``.

    Parameters
    ----------
    B : array of shape (d+1, d+1)
        ``B[i, j]`` is the weight of edge ``j -> i``; must be acyclic.
    noise_var : array of shape (d+1,)
        Positive noise variances.
    targets : sequence of int
        Predictor nodes (``1..d``) whose noise mean shifts across environments.
    """

    B: np.ndarray
    noise_var: np.ndarray
    targets: tuple[int, ...] = ()

    def __post_init__(self):
        B = np.array(self.B, dtype=float, copy=True)
        nv = np.array(self.noise_var, dtype=float, copy=True).reshape(-1)
        if B.ndim != 2 or B.shape[0] != B.shape[1] or B.shape[0] < 1:
            raise ValidationError("B must be a square matrix")
        if nv.shape != (B.shape[0],) or np.any(nv <= 0):
            raise ValidationError("noise_var must be positive with one entry per node")
        targets = tuple(sorted(set(int(t) for t in self.targets)))
        if any(t < 1 or t >= B.shape[0] for t in targets):
            raise ValidationError("intervention targets must be predictor nodes 1..d")
        B.setflags(write=False)
        nv.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "noise_var", nv)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "_order", _topological_order(B != 0))

    @property
    def n_vars(self) -> int:
        return self.B.shape[0]

    @property
    def d(self) -> int:
        return self.B.shape[0] - 1

    @property
    def order(self) -> list[int]:
        return list(self._order)

    def parents(self, i: int) -> set[int]:
        return set(int(j) for j in np.flatnonzero(self.B[i]))

    def children(self, i: int) -> set[int]:
        return set(int(j) for j in np.flatnonzero(self.B[:, i]))

    def descendants(self, i: int) -> set[int]:
        """Descendants of node ``i`` including ``i``."""
        out, stack = {i}, [i]
        while stack:
            for c in self.children(stack.pop()):
                if c not in out:
                    out.add(c)
                    stack.append(c)
        return out

    def graph(self) -> list[set[int]]:
        """Parent sets of the DAG with explicit intervention nodes appended.

        Intervention node ``d + 1 + k`` points at ``targets[k]``.
        """
        parents = [self.parents(i) for i in range(self.n_vars)]
        for k, t in enumerate(self.targets):
            parents.append(set())
            parents[t].add(self.n_vars + k)
        return parents

    def intervention_nodes(self) -> list[int]:
        return [self.n_vars + k for k in range(len(self.targets))]

    def shift_vector(self, shifts) -> np.ndarray:
        """Noise mean vector over all nodes from shifts on the targets."""
        shifts = np.asarray(shifts, dtype=float).reshape(-1)
        if shifts.shape != (len(self.targets),):
            raise ValidationError(f"expected {len(self.targets)} shifts, got {shifts.shape[0]}")
        mu = np.zeros(self.n_vars)
        mu[list(self.targets)] = shifts
        return mu

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "B": [[float(v) for v in row] for row in self.B],
            "noise_var": [float(v) for v in self.noise_var],
            "targets": list(self.targets),
            "version": SCM_VERSION,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LinearSCM":
        if doc.get("version") != SCM_VERSION:
            raise ValidationError(f"unsupported SCM document version {doc.get('version')!r}")
        scm = cls(np.array(doc["B"]), np.array(doc["noise_var"]), tuple(doc["targets"]))
        if scm.d != doc["d"]:
            raise ValidationError("SCM document 'd' disagrees with B")
        return scm


def _topological_order(adj: np.ndarray) -> tuple[int, ...]:
    """Kahn's algorithm on ``adj[i, j]`` meaning ``j -> i``."""
    p = adj.shape[0]
    indeg = adj.sum(axis=1).astype(int)
    ready = [i for i in range(p) if indeg[i] == 0]
    order = []
    while ready:
        j = ready.pop()
        order.append(j)
        for i in np.flatnonzero(adj[:, j]):
            indeg[i] -= 1
            if indeg[i] == 0:
                ready.append(int(i))
    if len(order) != p:
        raise ValidationError("B contains a directed cycle")
    return tuple(order)


def scm_dumps(scm: LinearSCM) -> str:
    return json.dumps(scm.to_json(), indent=2)


# ---------------------------------------------------------------------------
# sampling and population moments


def _mixing(scm: LinearSCM) -> np.ndarray:
    """``(Id - B)^{-1}``."""
    try:
        return np.linalg.inv(np.eye(scm.n_vars) - scm.B)
    except np.linalg.LinAlgError as exc:  # cannot happen for acyclic B
        raise NumericalError("Id - B is singular") from exc


def sample_data(
    scm: LinearSCM,
    env_shifts,
    n_per_env: int,
    rng_seed: int = 0,
    labels: Sequence[str] | None = None,
    mixing: np.ndarray | None = None,
) -> MultiEnvDataset:
    """Draw ``n_per_env`` rows per environment.

    ``env_shifts`` has one row per environment and one column per
    intervention target. Column 0 of the simulated variables becomes
    ``y``; predictor node ``j`` becomes column ``j - 1``.
    """
    shifts = np.asarray(env_shifts, dtype=float)
    if shifts.ndim == 1:
        shifts = shifts.reshape(-1, len(scm.targets)) if len(scm.targets) else shifts.reshape(-1, 0)
    n_envs = shifts.shape[0]
    if labels is None:
        labels = [f"env_{k}" for k in range(n_envs)]
    if len(labels) != n_envs:
        raise ValidationError("one label per environment required")
    if not np.all(np.isfinite(shifts)):
        raise ValidationError("shifts must be finite")
    A = _mixing(scm) if mixing is None else mixing
    rng = make_rng(rng_seed)
    sd = np.sqrt(scm.noise_var)
    blocks = []
    for k in range(n_envs):
        eps = rng.standard_normal((n_per_env, scm.n_vars)) * sd + scm.shift_vector(shifts[k])
        blocks.append(eps @ A.T)
    V = np.vstack(blocks)
    env = np.repeat(np.asarray(labels, dtype=object), n_per_env)
    return MultiEnvDataset(V[:, 1:], V[:, 0], env, tuple(f"X{j}" for j in range(1, scm.n_vars)))


def population_cov(scm: LinearSCM, env_shift=None) -> tuple[np.ndarray, np.ndarray]:
    """Covariance and mean of all ``d+1`` variables in one environment."""
    A = _mixing(scm)
    mu = np.zeros(scm.n_vars) if env_shift is None else scm.shift_vector(env_shift)
    return A @ np.diag(scm.noise_var) @ A.T, A @ mu


def mixture_moments(scm: LinearSCM, env_shifts=None) -> tuple[np.ndarray, np.ndarray]:
    """Covariance and mean of the equal-weight mixture over environments."""
    if env_shifts is None:
        return population_cov(scm)
    shifts = np.atleast_2d(np.asarray(env_shifts, dtype=float))
    covs, means = zip(*(population_cov(scm, s) for s in shifts))
    means = np.array(means)
    mbar = means.mean(axis=0)
    dev = means - mbar
    return covs[0] + dev.T @ dev / len(means), mbar


def population_regression(cov: np.ndarray, mean: np.ndarray, subset: Sequence[int]) -> tuple[float, np.ndarray]:
    """Population intercept and coefficients of ``Y`` (node 0) on the nodes in ``subset``."""
    S = list(subset)
    if not S:
        return float(mean[0]), np.zeros(0)
    try:
        beta = np.linalg.solve(cov[np.ix_(S, S)], cov[S, 0])
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular covariance on nodes {tuple(S)}") from exc
    return float(mean[0] - mean[S] @ beta), beta


def population_ols_direct(scm: LinearSCM, env_shifts=None) -> np.ndarray:
    """Population OLS of ``Y`` on all predictors under the environment mixture."""
    cov, mean = mixture_moments(scm, env_shifts)
    return population_regression(cov, mean, range(1, scm.n_vars))[1]


def population_ols_lemma1(scm: LinearSCM, shift_var=0.0) -> np.ndarray:
    """Closed-form population OLS from the block structure of ``B``.

    With ``b_pa = B[0, 1:]``, ``b_ch = B[1:, 0]``, ``B_X = B[1:, 1:]`` and
    ``D`` the predictor noise covariance,

    ``b_pa + ((I - B_X)^T - b_pa b_ch^T) D^{-1} b_ch (1 - v q / (1 + v q)) v``

    where ``v = Var(noise_Y)`` and ``q = b_ch^T D^{-1} b_ch``. Shift variance
    (scalar or one value per target) is added to ``D`` on target nodes.
    """
    d = scm.d
    b_pa = scm.B[0, 1:]
    b_ch = scm.B[1:, 0]
    BX = scm.B[1:, 1:]
    dvar = np.array(scm.noise_var[1:])
    sv = np.broadcast_to(np.asarray(shift_var, dtype=float), (len(scm.targets),))
    for t, s in zip(scm.targets, sv):
        dvar[t - 1] += s
    v = float(scm.noise_var[0])
    dinv_ch = b_ch / dvar
    q = float(b_ch @ dinv_ch)
    factor = (1.0 - v * q / (1.0 + v * q)) * v
    return b_pa + ((np.eye(d) - BX).T - np.outer(b_pa, b_ch)) @ dinv_ch * factor


# ---------------------------------------------------------------------------
# graph queries


def d_separated(parents: Sequence[set[int]], a: int, b: int, cond: Iterable[int] = ()) -> bool:
    """Whether ``a`` and ``b`` are d-separated given ``cond``.

    ``parents[i]`` is the parent set of node ``i``. Uses the reachability
    (Bayes-ball) formulation: traverse active trails from ``a`` and check
    whether ``b`` is reached.
    """
    cond = set(cond)
    if a == b or a in cond or b in cond:
        raise ValidationError("a, b and the conditioning set must be disjoint")
    n = len(parents)
    children = [set() for _ in range(n)]
    for i, ps in enumerate(parents):
        for p in ps:
            children[p].add(i)
    # nodes with a descendant in cond (including themselves)
    anc = set()
    stack = list(cond)
    while stack:
        v = stack.pop()
        if v not in anc:
            anc.add(v)
            stack.extend(parents[v])
    # state: (node, arrived_from_child) ; "up" means travelling against edges
    visited = set()
    stack = [(a, True)]
    while stack:
        v, up = stack.pop()
        if (v, up) in visited:
            continue
        visited.add((v, up))
        if v == b:
            return False
        if up and v not in cond:
            stack.extend((p, True) for p in parents[v])
            stack.extend((c, False) for c in children[v])
        elif not up:
            if v not in cond:
                stack.extend((c, False) for c in children[v])
            if v in anc:
                stack.extend((p, True) for p in parents[v])
    return True


def intervention_stable(scm: LinearSCM, S: Iterable[int]) -> bool:
    """Every intervention node is d-separated from ``Y`` given the predictor nodes ``S``."""
    S = set(int(s) for s in S)
    g = scm.graph()
    return all(d_separated(g, i, 0, S) for i in scm.intervention_nodes())


@dataclass(frozen=True)
class BlanketTruth:
    """Blanket sets of ``Y`` as predictor node indices (``1..d``)."""

    pa: frozenset[int]
    mb: frozenset[int]
    sb: frozenset[int]
    nsb: frozenset[int]
    n_int: frozenset[int] = field(default_factory=frozenset)

    def columns(self, name: str) -> list[int]:
        """Dataset column indices of the named set."""
        return sorted(j - 1 for j in getattr(self, name))

    def to_json(self) -> dict:
        return {k: sorted(getattr(self, k)) for k in ("pa", "mb", "sb", "nsb", "n_int")}


def blankets(scm: LinearSCM) -> BlanketTruth:
    """Parents, Markov blanket, stable blanket and non-stable blanket of ``Y``.

    Predictors descending from (or equal to) an intervened child of ``Y``
    are unavailable to the stable blanket, which consists of the parents
    of ``Y``, its remaining children and those children's parents.
    """
    pa = scm.parents(0)
    ch = scm.children(0)
    mb = (pa | ch | set().union(*(scm.parents(c) for c in ch))) - {0}
    removed = set().union(*(scm.descendants(c) for c in ch if c in scm.targets))
    n_int = set(range(1, scm.n_vars)) - removed
    ch_ok = ch & n_int
    sb = (pa | ch_ok | (set().union(*(scm.parents(c) for c in ch_ok)) & n_int)) - {0}
    return BlanketTruth(frozenset(pa), frozenset(mb), frozenset(sb), frozenset(mb - sb), frozenset(n_int))


def stable_blanket_definitional(scm: LinearSCM) -> frozenset[int]:
    """Smallest ``S`` within ``N^int`` separating ``Y`` from the rest of ``N^int``.

    Exhaustive search by increasing size; intended for small graphs.
    """
    n_int = sorted(blankets(scm).n_int)
    g = [scm.parents(i) for i in range(scm.n_vars)]
    for k in range(len(n_int) + 1):
        for S in combinations(n_int, k):
            Sset = set(S)
            if all(d_separated(g, j, 0, Sset) for j in n_int if j not in Sset):
                return frozenset(S)
    raise AssertionError("unreachable: N^int itself always separates")


def strong_limit_applies(scm: LinearSCM) -> bool:
    """Whether OLS coefficients outside the stable blanket must vanish as shifts grow.

    Requires an intervened child of ``Y`` and that every child of ``Y``
    outside ``N^int`` is itself a target. A child reached by a shift only
    through another predictor keeps bounded noise variance, and OLS can
    then cancel the shift with a linear combination of the two.
    """
    truth = blankets(scm)
    ch = scm.children(0)
    targets = set(scm.targets)
    return bool(ch & targets) and (ch - truth.n_int) <= targets


def strong_intervention_limit_check(scm: LinearSCM, sigmas: Sequence[float]) -> list[dict]:
    """Population OLS as the shift standard deviation grows.

    For each ``sigma`` the shift variance ``sigma**2`` is added on every
    target; reports the coefficients and the largest absolute coefficient
    outside the stable blanket.
    """
    sb = blankets(scm).sb
    outside = [j - 1 for j in range(1, scm.n_vars) if j not in sb]
    rows = []
    for s in sigmas:
        beta = population_ols_lemma1(scm, float(s) ** 2)
        rows.append({
            "sigma": float(s),
            "coefs": beta,
            "max_abs_outside_sb": float(np.max(np.abs(beta[outside]))) if outside else 0.0,
        })
    return rows
