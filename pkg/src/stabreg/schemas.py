"""JSON Schemas (draft 2020-12) for every JSON document the package writes.

The schemas are plain dictionaries so the package itself needs no
validator; any JSON Schema implementation can check outputs against them.
"""

from __future__ import annotations

_NUM = {"type": "number"}
_NUM_OR_NULL = {"type": ["number", "null"]}
_INDEX_SET = {"type": "array", "items": {"type": "integer", "minimum": 0}, "uniqueItems": True}
_NAME_SET = {"type": "array", "items": {"type": "string"}}
_ALPHA = {"oneOf": [{"type": "number", "exclusiveMinimum": 0, "maximum": 1}, {"const": "off"}]}

SR_CONFIG = {
    "type": "object",
    "required": ["alpha_stab", "alpha_pred", "stab_test", "pred_kind", "screen", "screen_size",
                 "n_sets", "max_set_size", "B_boot", "B_resample", "seed"],
    "properties": {
        "alpha_stab": _ALPHA,
        "alpha_pred": _ALPHA,
        "stab_test": {"enum": ["auto", "chow", "scaled_residual"]},
        "pred_kind": {"enum": ["pooled", "min_env"]},
        "screen": {"enum": ["none", "corr", "lasso"]},
        "screen_size": {"type": ["integer", "null"], "minimum": 1},
        "n_sets": {"oneOf": [{"type": "integer", "minimum": 1}, {"const": "exhaustive"}]},
        "max_set_size": {"type": "integer", "minimum": 1},
        "B_boot": {"type": "integer", "minimum": 1},
        "B_resample": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
    },
}

MODEL = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "stabilized regression model",
    "type": "object",
    "required": ["version", "config", "column_names", "screened", "n_candidate_sets",
                 "n_stable_sets", "sets", "diagnostics"],
    "properties": {
        "version": {"const": "stabreg-model/1"},
        "config": SR_CONFIG,
        "column_names": _NAME_SET,
        "screened": _NAME_SET,
        "n_candidate_sets": {"type": "integer", "minimum": 1},
        "n_stable_sets": {"type": "integer", "minimum": 1},
        "sets": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["variables", "weight", "intercept", "coefficients", "p_value", "score"],
                "properties": {
                    "variables": _NAME_SET,
                    "weight": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "intercept": _NUM,
                    "coefficients": {"type": "array", "items": _NUM},
                    "p_value": {"type": "number", "minimum": 0, "maximum": 1},
                    "score": {"type": "number", "maximum": 0},
                },
            },
        },
        "diagnostics": {
            "type": "object",
            "required": ["stab_test", "no_stable_sets", "best_set", "c_pred", "n_dropped"],
            "properties": {
                "stab_test": {"enum": ["chow", "scaled_residual", None]},
                "no_stable_sets": {"type": "boolean"},
                "best_set": _NAME_SET,
                "c_pred": _NUM_OR_NULL,
                "n_dropped": {"type": "integer", "minimum": 0},
            },
        },
    },
}

SCM = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "linear structural causal model",
    "type": "object",
    "required": ["d", "B", "noise_var", "targets", "version"],
    "properties": {
        "d": {"type": "integer", "minimum": 0},
        "B": {"type": "array", "items": {"type": "array", "items": _NUM}},
        "noise_var": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "targets": _INDEX_SET,
        "version": {"const": "stabreg-scm/1"},
    },
}

TRUTH = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "blanket ground truth (node indices, response = 0)",
    "type": "object",
    "required": ["pa", "mb", "sb", "nsb", "n_int"],
    "properties": {k: _INDEX_SET for k in ("pa", "mb", "sb", "nsb", "n_int")} | {"seed": {"type": "integer"}},
}

THRESHOLDS = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "stability selection thresholds",
    "type": "object",
    "required": ["threshold_sr", "threshold_srdiff", "n_subsamples"],
    "properties": {
        "threshold_sr": {"type": "number", "exclusiveMinimum": 0.5, "maximum": 1},
        "threshold_srdiff": {"type": "number", "exclusiveMinimum": 0.5, "maximum": 1},
        "n_subsamples": {"type": "integer", "minimum": 1},
        "attainable_sr": {"type": "boolean"},
        "attainable_srdiff": {"type": "boolean"},
        "q_sr": {"type": "number", "minimum": 0},
        "q_srdiff": {"type": "number", "minimum": 0},
        "p": {"type": "integer", "minimum": 1},
    },
}

_QUANTILES = {
    "type": "object",
    "required": ["n", "median", "q25", "q75"],
    "properties": {"n": {"type": "integer", "minimum": 0}, "median": _NUM_OR_NULL,
                   "q25": _NUM_OR_NULL, "q75": _NUM_OR_NULL},
}

_PER_TARGET = {
    "type": "object",
    "required": ["mb", "sb", "nsb"],
    "additionalProperties": False,
    "patternProperties": {"^(mb|sb|nsb)$": {}},
}

BENCH = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "benchmark result",
    "type": "object",
    "required": ["version", "design", "methods", "n_reps", "seed", "sr_config", "gamma_grid",
                 "repetitions", "aggregates", "failure_counts", "flagged"],
    "properties": {
        "version": {"const": "stabreg-bench/1"},
        "design": {"type": "object", "required": ["kind", "d", "n_per_env"]},
        "methods": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "n_reps": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "sr_config": {"oneOf": [SR_CONFIG, {"type": "null"}]},
        "gamma_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "repetitions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["rep", "seed", "stratum", "data_sha256", "truth", "test_rss",
                             "pauc10", "tpr_at_fp", "failures"],
                "properties": {
                    "rep": {"type": "integer", "minimum": 0},
                    "seed": {"type": "integer"},
                    "stratum": {"enum": ["mb=sb", "mb!=sb"]},
                    "data_sha256": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
                    "truth": TRUTH,
                    "test_rss": {"type": "object", "additionalProperties": {"type": ["number", "null"], "minimum": 0}},
                    "pauc10": {
                        "type": "object",
                        "additionalProperties": _PER_TARGET | {
                            "patternProperties": {"^(mb|sb|nsb)$": {"type": ["number", "null"],
                                                                     "minimum": 0, "maximum": 1}},
                        },
                    },
                    "tpr_at_fp": {
                        "type": "object",
                        "additionalProperties": _PER_TARGET | {
                            "patternProperties": {"^(mb|sb|nsb)$": {
                                "oneOf": [{"type": "null"},
                                          {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}}],
                            }},
                        },
                    },
                    "failures": {"type": "object", "additionalProperties": {"type": "string"}},
                },
            },
        },
        "aggregates": {
            "type": "object",
            "required": ["prediction", "recovery", "mean_tpr_at_fp", "n_recovery_reps"],
            "properties": {
                "prediction": {
                    "type": "object",
                    "required": ["mb=sb", "mb!=sb", "all"],
                    "additionalProperties": {"type": "object", "additionalProperties": _QUANTILES},
                },
                "recovery": {"type": "object"},
                "mean_tpr_at_fp": {"type": "object"},
                "n_recovery_reps": {"type": "integer", "minimum": 0},
            },
        },
        "failure_counts": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
        "flagged": {"type": "array", "items": {"type": "string"}},
    },
}

SCHEMAS = {"model": MODEL, "scm": SCM, "truth": TRUTH, "thresholds": THRESHOLDS, "bench": BENCH}
