"""Re-run the pipeline at several interval lengths and tabulate the errors."""

from __future__ import annotations

import csv
import io
from dataclasses import replace

from ..datasets import GRANULARITIES
from ..errors import EmsForecastError
from ..model.spec import ModelSpec

__all__ = ["SENSITIVITY_COLUMNS", "sensitivity_run", "sensitivity_csv"]

SENSITIVITY_COLUMNS = ("granularity", "model_id", "mse", "nrmse", "mse_zero", "mse_nonzero", "n_zero", "n_nonzero",
                       "y_max", "y_min")


def _spec_for(spec, schema):
    names = set(schema.names)
    mask = {k: v for k, v in spec.feature_mask.items() if k in names}
    return replace(spec, feature_mask=mask)


def sensitivity_run(raw, granularities=GRANULARITIES, config=None, models=None, train_options=None, seed=0,
                    tree=False, medic=True):
    """One row per (granularity, model).

    ``raw`` is a :class:`~emsforecast.pipeline.RawData`; each granularity
    re-bins, re-windows, re-splits and re-scales it.  ``models`` maps a model
    id to a :class:`ModelSpec` (or a callable ``prepared -> ModelSpec``);
    feature-mask entries for columns pruned at that granularity are ignored.
    The Medic baseline is always included unless ``medic`` is False.
    """
    from .. import pipeline as pl

    cfg = config or pl.PipelineConfig()
    rows = []
    for g in granularities:
        try:
            prep = pl.prepare_raw(raw, replace(cfg, granularity=int(g)))
            reports = [pl.medic_report(prep)] if medic else []
            for mid, spec in (models or {}).items():
                s = spec(prep) if callable(spec) else spec
                if isinstance(s, dict):
                    s = ModelSpec.from_dict(s)
                m = pl.fit_model(prep.ds, _spec_for(s, prep.ds.schema), train_options, seed)
                reports.append(pl.evaluate_model(m, prep, mid))
            if tree:
                reports.append(pl.tree_baseline(prep, seed=seed)[0])
        except EmsForecastError as exc:
            exc.granularity = int(g)
            exc.args = (f"at {g}-hour granularity: {exc}",)
            raise
        for r in reports:
            d = r.to_dict()
            rows.append({k: d[k] for k in SENSITIVITY_COLUMNS})
    return rows


def sensitivity_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, SENSITIVITY_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r[k] is None else repr(r[k]) if isinstance(r[k], float) else r[k])
                    for k in SENSITIVITY_COLUMNS})
    return buf.getvalue()
