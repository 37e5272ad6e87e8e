"""Metrics, model comparison, granularity sensitivity and Shapley attribution."""

from .metrics import EvaluationReport, compare_models, make_report, margin, mse, nrmse, split_id, split_metrics
from .shapley import (
    AttributionConfig,
    ShapleyResult,
    feature_table,
    model_attribution,
    model_value_function,
    shapley_attribution,
    shapley_values,
)

__all__ = [
    "EvaluationReport",
    "compare_models",
    "make_report",
    "margin",
    "mse",
    "nrmse",
    "split_id",
    "split_metrics",
    "AttributionConfig",
    "ShapleyResult",
    "feature_table",
    "model_attribution",
    "model_value_function",
    "shapley_attribution",
    "shapley_values",
]

from .sensitivity import SENSITIVITY_COLUMNS, sensitivity_csv, sensitivity_run  # noqa: E402

__all__ += ["SENSITIVITY_COLUMNS", "sensitivity_csv", "sensitivity_run"]
