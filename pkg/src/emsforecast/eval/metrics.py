"""Error metrics, evaluation reports and model comparison tables."""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ComparisonError, DegenerateRange, ShapeError

__all__ = ["mse", "nrmse", "split_metrics", "EvaluationReport", "make_report", "split_id", "compare_models",
           "margin"]


def _pair(pred, actual):
    a = np.asarray(pred, dtype=float)
    b = np.asarray(actual, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"prediction shape {a.shape} != actual shape {b.shape}")
    if a.size == 0:
        raise ShapeError("empty inputs")
    return a, b


def mse(pred, actual) -> float:
    a, b = _pair(pred, actual)
    return float(np.mean((a - b) ** 2))


def nrmse(mse_value, y_max, y_min) -> float:
    """sqrt(MSE) / (y_max - y_min)."""
    if mse_value < 0:
        raise ValueError("MSE must be non-negative")
    if not y_max > y_min:
        raise DegenerateRange(f"need y_max > y_min, got {y_max} <= {y_min}")
    return math.sqrt(mse_value) / (y_max - y_min)


def split_metrics(pred, actual) -> dict:
    """MSE over cell-periods with zero and with positive actual demand.

    An empty partition reports ``None`` rather than 0.
    """
    a, b = _pair(pred, actual)
    zero = b == 0
    nz, nn = int(zero.sum()), int((~zero).sum())
    return {
        "mse_zero": float(np.mean((a[zero] - b[zero]) ** 2)) if nz else None,
        "mse_nonzero": float(np.mean((a[~zero] - b[~zero]) ** 2)) if nn else None,
        "n_zero": nz,
        "n_nonzero": nn,
    }


def split_id(t_index, granularity) -> str:
    """Fingerprint of a test split, used to refuse cross-split comparisons."""
    h = hashlib.sha256(np.asarray(t_index, dtype="<i8").tobytes() + str(int(granularity)).encode())
    return h.hexdigest()[:16]


@dataclass
class EvaluationReport:
    model_id: str
    granularity: int
    mse: float
    nrmse: float | None
    mse_zero: float | None
    mse_nonzero: float | None
    n_zero: int
    n_nonzero: int
    split: str
    y_max: float | None = None
    y_min: float | None = None
    extra: dict = field(default_factory=dict)
    comparison: list | None = None      # rows from compare_models
    attribution: list | None = None     # feature table from Shapley attribution

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def make_report(model_id, pred, actual, granularity, split, y_max=None, y_min=None, extra=None):
    m = mse(pred, actual)
    s = split_metrics(pred, actual)
    nr = nrmse(m, y_max, y_min) if y_max is not None and y_min is not None else None
    return EvaluationReport(model_id, int(granularity), m, nr, s["mse_zero"], s["mse_nonzero"], s["n_zero"],
                            s["n_nonzero"], split, None if y_max is None else float(y_max),
                            None if y_min is None else float(y_min), dict(extra or {}))


def margin(mse_a, mse_b) -> float:
    """Percentage by which ``a`` improves on ``b``: (MSE_b - MSE_a) / MSE_b * 100."""
    if mse_b == 0:
        return 0.0 if mse_a == 0 else -math.inf
    return (mse_b - mse_a) / mse_b * 100.0


def compare_models(reports) -> list:
    """Rows sorted by MSE with the leader's margin over each model."""
    reports = list(reports)
    if len(reports) < 2:
        raise ComparisonError("need at least two reports to compare")
    splits = {(r.split, r.granularity) for r in reports}
    if len(splits) != 1:
        raise ComparisonError(f"reports were scored on different test splits: {sorted(splits)}")
    order = sorted(reports, key=lambda r: r.mse)
    best = order[0]
    return [{"rank": k + 1, "model_id": r.model_id, "mse": r.mse, "nrmse": r.nrmse,
             "best_margin_pct": margin(best.mse, r.mse)} for k, r in enumerate(order)]
