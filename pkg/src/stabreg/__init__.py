"""Stabilized regression for multi-environment data.

Averages subset regressions that are both stable across environments and
predictive, and ships the linear-SCM machinery (population OLS, stable
blankets) and simulation benchmark used to study it.
"""

from stabreg.dataset import MultiEnvDataset, load_csv, write_csv
from stabreg.exceptions import (
    InputError,
    NumericalError,
    SingularDesignError,
    StabRegError,
    UnderdeterminedError,
    ValidationError,
)
from stabreg.stabilized_regression import (
    SRConfig,
    SRModel,
    fit_sr,
    importance_coef,
    importance_srdiff,
    importance_weight,
    predict_sr,
)

__all__ = [
    "InputError",
    "MultiEnvDataset",
    "NumericalError",
    "SRConfig",
    "SRModel",
    "SingularDesignError",
    "StabRegError",
    "UnderdeterminedError",
    "ValidationError",
    "fit_sr",
    "importance_coef",
    "importance_srdiff",
    "importance_weight",
    "load_csv",
    "predict_sr",
    "write_csv",
]

__version__ = "0.1.0"
