"""Selection probabilities of stabilized regression over half-subsamples.

Each subsample is fitted with the stability-filtered estimator and its
predictive variant. A variable counts as selected by SR when its
coefficient importance is positive, and by the difference criterion when
the predictive variant's importance exceeds SR's. The selection
threshold bounds the expected number of false selections by one.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from stabreg._random import derive_seed
from stabreg.dataset import MultiEnvDataset, subsample_half
from stabreg.exceptions import StabRegError, ValidationError
from stabreg.stabilized_regression import (
    SRConfig,
    fit_sr,
    importance_coef,
    importance_srdiff,
    srpred_config,
)

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.20
SCATTER_COLUMNS = ["variable", "pi_srdiff", "pi_sr", "sign_fraction", "selected_sr", "selected_srdiff"]


@dataclass(frozen=True, eq=False)
class SelectionProfile:
    """Aggregated selection frequencies.

    ``threshold_*`` is ``min(1, (1 + q^2 / p) / 2)``. When the unclamped
    value exceeds 1 (``attainable_* = False``) the error bound cannot be
    met and no variable is declared selected. ``sign_fraction`` is NaN for
    variables never selected.
    """

    names: tuple[str, ...]
    pi_sr: np.ndarray
    pi_srdiff: np.ndarray
    q_sr: float
    q_srdiff: float
    p: int
    threshold_sr: float
    threshold_srdiff: float
    attainable_sr: bool
    attainable_srdiff: bool
    sign_fraction: np.ndarray
    n_subsamples: int
    n_failed: int = 0

    @property
    def selected_sr(self) -> np.ndarray:
        return self.attainable_sr & (self.pi_sr >= self.threshold_sr)

    @property
    def selected_srdiff(self) -> np.ndarray:
        return self.attainable_srdiff & (self.pi_srdiff >= self.threshold_srdiff)


def selection_threshold(q: float, p: int) -> tuple[float, bool]:
    """Threshold making the bound ``q^2 / ((2 pi - 1) p)`` equal to one.

    Returns ``(min(1, value), value <= 1)``.
    """
    if p < 1:
        raise ValidationError("p must be positive")
    value = (1.0 + q * q / p) / 2.0
    return min(1.0, value), value <= 1.0


def _one_subsample(args):
    ds, config, seed = args
    sub = subsample_half(ds, derive_seed(seed, 0))
    cfg = replace(config, seed=derive_seed(seed, 1))
    try:
        m_sr = fit_sr(sub, cfg)
        m_pred = fit_sr(sub, srpred_config(cfg))
    except StabRegError as exc:
        return None, f"{type(exc).__name__}: {exc}"
    v_sr = importance_coef(m_sr).values
    v_diff = importance_srdiff(m_sr, m_pred, "coef").values
    # sign of the averaged coefficient in the model that selected the variable
    coef = np.where(v_sr > 0, m_sr.coef(), m_pred.coef())
    return (v_sr > 0, v_diff > 0, coef > 0), None


def run_stability_selection(
    ds: MultiEnvDataset,
    config: SRConfig | None = None,
    n_subsamples: int = 100,
    rng_seed: int = 0,
    jobs: int = 1,
) -> SelectionProfile:
    """Selection probabilities over ``n_subsamples`` half-subsamples.

    Subsamples draw half of every environment without replacement. ``q``
    is the mean number of selected variables per subsample and ``p`` the
    number of predictor columns.

    Raises
    ------
    ValidationError
        ``n_subsamples < 20``, an environment with fewer than 4 rows, or
        more than 20% of the subsamples failed.
    """
    config = config or SRConfig()
    if n_subsamples < 20:
        raise ValidationError("n_subsamples must be at least 20")
    if min(ds.env_index.sizes) < 4:
        raise ValidationError("every environment needs at least 4 rows")
    tasks = [(ds, config, derive_seed(rng_seed, i)) for i in range(n_subsamples)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_subsample, tasks))
    else:
        results = [_one_subsample(t) for t in tasks]
    failures = [msg for res, msg in results if res is None]
    for msg in failures:
        log.warning("subsample failed: %s", msg)
    if len(failures) > MAX_FAILURE_RATE * n_subsamples:
        raise ValidationError(f"{len(failures)} of {n_subsamples} subsamples failed")
    ok = [res for res, _ in results if res is not None]
    sel_sr = np.array([r[0] for r in ok])
    sel_diff = np.array([r[1] for r in ok])
    positive = np.array([r[2] for r in ok])
    m = len(ok)
    pi_sr = sel_sr.sum(axis=0) / m
    pi_diff = sel_diff.sum(axis=0) / m
    chosen = sel_sr | sel_diff
    n_chosen = chosen.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        sign_fraction = np.where(n_chosen > 0, (positive & chosen).sum(axis=0) / n_chosen, np.nan)
    p = ds.d
    q_sr = float(sel_sr.sum(axis=1).mean())
    q_diff = float(sel_diff.sum(axis=1).mean())
    t_sr, a_sr = selection_threshold(q_sr, p)
    t_diff, a_diff = selection_threshold(q_diff, p)
    return SelectionProfile(
        names=ds.column_names,
        pi_sr=pi_sr,
        pi_srdiff=pi_diff,
        q_sr=q_sr,
        q_srdiff=q_diff,
        p=p,
        threshold_sr=t_sr,
        threshold_srdiff=t_diff,
        attainable_sr=a_sr,
        attainable_srdiff=a_diff,
        sign_fraction=sign_fraction,
        n_subsamples=m,
        n_failed=len(failures),
    )


def emit_selection_scatter(profile: SelectionProfile, annotations: dict[str, str] | None = None):
    """Rows for a scatter of SR against difference-criterion selection probabilities.

    Returns ``(rows, thresholds)``. Rows follow ``SCATTER_COLUMNS``; an
    ``annotation`` column is added when ``annotations`` is non-empty.
    """
    rows = []
    for j, name in enumerate(profile.names):
        row = {
            "variable": name,
            "pi_srdiff": float(profile.pi_srdiff[j]),
            "pi_sr": float(profile.pi_sr[j]),
            "sign_fraction": None if np.isnan(profile.sign_fraction[j]) else float(profile.sign_fraction[j]),
            "selected_sr": bool(profile.selected_sr[j]),
            "selected_srdiff": bool(profile.selected_srdiff[j]),
        }
        if annotations:
            row["annotation"] = annotations.get(name, "")
        rows.append(row)
    thresholds = {
        "threshold_sr": profile.threshold_sr,
        "threshold_srdiff": profile.threshold_srdiff,
        "n_subsamples": profile.n_subsamples,
        "attainable_sr": profile.attainable_sr,
        "attainable_srdiff": profile.attainable_srdiff,
        "q_sr": profile.q_sr,
        "q_srdiff": profile.q_srdiff,
        "p": profile.p,
    }
    return rows, thresholds


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_selection_scatter(profile: SelectionProfile, out_dir, annotations=None) -> tuple[Path, Path]:
    """Write ``selection.csv`` and ``thresholds.json`` under ``out_dir``."""
    rows, thresholds = emit_selection_scatter(profile, annotations)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = SCATTER_COLUMNS + (["annotation"] if annotations else [])
    csv_path = out / "selection.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_cell(row[c]) for c in cols])
    json_path = out / "thresholds.json"
    json_path.write_text(json.dumps(thresholds, indent=2) + "\n", encoding="utf-8")
    return csv_path, json_path


def read_selection_scatter(path) -> list[dict]:
    """Parse a ``selection.csv`` written by :func:`write_selection_scatter`."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({
            "variable": r["variable"],
            "pi_srdiff": float(r["pi_srdiff"]),
            "pi_sr": float(r["pi_sr"]),
            "sign_fraction": None if r["sign_fraction"] == "" else float(r["sign_fraction"]),
            "selected_sr": r["selected_sr"] == "true",
            "selected_srdiff": r["selected_srdiff"] == "true",
            **({"annotation": r["annotation"]} if "annotation" in r else {}),
        })
    return out
