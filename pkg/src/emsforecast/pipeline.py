"""End-to-end glue: raw data -> dataset -> tuned model -> evaluation.

Seeds: one global seed expands into per-stage seeds with :func:`stage_seed`,
``SeedSequence([seed, k])`` where ``k`` is the stage's index in ``STAGES``.
Each stage is therefore reproducible on its own.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .datasets import (
    DemandDataset,
    Externals,
    GridSpec,
    apply_scaler,
    bin_incidents,
    chronological_split,
    default_schema,
    daily_to_intervals,
    events_to_maps,
    fit_scaler,
    holidays_to_flags,
    medic_forecast_many,
    prune_dataset,
    window_instances,
)
from .datasets.core import _utc
from .datasets.io import atomic_write, load_dataset, save_dataset
from .eval.metrics import EvaluationReport, make_report, split_id
from .hyperopt import (
    Partition,
    bo_dropout_run,
    bo_run,
    default_space,
    hierarchical_bo_run,
    random_search,
    spec_from_theta,
    validate_partition,
)
from .model import ModelSpec, TrainOptions, build_cnn, build_mlp, build_network, gather_inputs, predict_demand, train
from .trees import grid_search_trees

__all__ = [
    "STAGES",
    "STRATEGIES",
    "stage_seed",
    "config_hash",
    "PipelineConfig",
    "RawData",
    "raw_from_synth",
    "save_raw",
    "load_raw",
    "Prepared",
    "prepare",
    "prepare_raw",
    "save_prepared",
    "load_prepared",
    "test_actuals",
    "demand_range",
    "make_objective",
    "tune_model",
    "fit_model",
    "evaluate_model",
    "medic_report",
    "global_mean_report",
    "subregion_rows",
    "TREE_GRID",
    "tree_baseline",
]

STAGES = ("synth", "features", "tune", "train", "trees", "shap", "sensitivity", "records")
STRATEGIES = ("random", "bo-gp", "bo-rf", "bo-et", "bo-dropout", "bo-hier")


def stage_seed(seed, stage) -> int:
    k = STAGES.index(stage)
    return int(np.random.SeedSequence([int(seed), k]).generate_state(1)[0])


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class PipelineConfig:
    granularity: int = 8
    look_back: int = 6
    fractions: tuple = (0.6, 0.2, 0.2)
    prune_threshold: float | None = 0.8     # None keeps every external column
    upsample: bool = True

    def to_dict(self):
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "fractions" in d:
            d["fractions"] = tuple(d["fractions"])
        return cls(**d)


@dataclass
class RawData:
    """Ungridded inputs; re-binned on demand for any granularity."""

    records: list
    grid: GridSpec
    start: datetime
    end: datetime
    daily_weather: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    holidays: list = field(default_factory=list)

    def cube(self, granularity):
        return bin_incidents(self.records, self.grid, granularity, self.start, self.end)

    def externals(self, granularity, n):
        series = daily_to_intervals(self.daily_weather, self.start, n, granularity) if self.daily_weather else {}
        maps = events_to_maps(self.events, self.grid, self.start, n, granularity) if self.events else {}
        flags = holidays_to_flags(self.holidays, self.start, n, granularity) if self.holidays else {}
        return Externals(series, maps, flags)


def save_raw(raw: RawData, directory):
    """Canonical CSVs plus ``raw.json`` (grid and time range)."""
    from .datasets.io import write_events_csv, write_holidays_csv, write_incidents_csv, write_weather_csv
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_incidents_csv(d / "incidents.csv", raw.records)
    if raw.daily_weather:
        write_weather_csv(d / "weather.csv", raw.daily_weather)
    if raw.events:
        write_events_csv(d / "events.csv", raw.events)
    if raw.holidays:
        write_holidays_csv(d / "holidays.csv", raw.holidays)
    meta = {"format": "emsforecast-raw/1", "grid": raw.grid.to_dict(), "start": raw.start.isoformat(),
            "end": raw.end.isoformat()}
    atomic_write(d / "raw.json", json.dumps(meta, indent=1, sort_keys=True))
    return d / "raw.json"


def load_raw(directory) -> RawData:
    from .datasets.io import read_events_csv, read_holidays_csv, read_incidents_csv, read_weather_csv
    d = Path(directory)
    try:
        meta = json.loads((d / "raw.json").read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"no raw.json in {d}") from None
    if meta.get("format") != "emsforecast-raw/1":
        raise ValueError(f"{d}: unsupported raw format {meta.get('format')!r}")
    opt = lambda name, fn, empty: fn(d / name) if (d / name).exists() else empty
    return RawData(read_incidents_csv(d / "incidents.csv"), GridSpec(**meta["grid"]), _utc(meta["start"]),
                   _utc(meta["end"]), opt("weather.csv", read_weather_csv, {}), opt("events.csv", read_events_csv, []),
                   opt("holidays.csv", read_holidays_csv, []))


def raw_from_synth(result, seed=0) -> RawData:
    """Incident records (and daily externals) whose binning reproduces the synthetic cube.

    Per-interval decoy series have no raw form and are not carried over.
    """
    from .datasets import records_from_cube
    rng = np.random.default_rng(stage_seed(seed, "records"))
    recs = records_from_cube(result.cube, result.grid, result.start, result.granularity, rng)
    end = result.start + timedelta(hours=int(result.cube.shape[2] * result.granularity))
    return RawData(recs, result.grid, result.start, end, dict(result.daily_weather), list(result.events),
                   list(result.holidays))


@dataclass
class Prepared:
    """A split, pruned and scaled dataset together with the raw count cube."""

    ds: DemandDataset
    cube: np.ndarray
    start: datetime
    config: PipelineConfig
    pruned: dict = field(default_factory=dict)


def prepare(cube, externals=None, start=None, config: PipelineConfig | None = None) -> Prepared:
    """Window, split, prune (on train) and scale (on train) a count cube."""
    cfg = config or PipelineConfig()
    ext = externals or Externals()
    schema = default_schema(ext, cfg.granularity, cfg.look_back, cfg.upsample)
    ds = window_instances(cube, ext, cfg.look_back, cfg.granularity, start, schema)
    ds = chronological_split(ds, cfg.fractions)
    pruned = {}
    if cfg.prune_threshold is not None:
        ds, res = prune_dataset(ds, cfg.prune_threshold)
        pruned = {"kept": res.kept, "dropped": res.dropped, "flagged": list(res.flagged)}
    ds = apply_scaler(fit_scaler(ds.part("train")), ds)
    start = _utc(start) if start is not None else None
    return Prepared(ds, np.asarray(cube, dtype=float), start, cfg, pruned)


def prepare_raw(raw: RawData, config: PipelineConfig | None = None) -> Prepared:
    cfg = config or PipelineConfig()
    cube = raw.cube(cfg.granularity)
    return prepare(cube, raw.externals(cfg.granularity, cube.shape[2]), raw.start, cfg)


def save_prepared(prep: Prepared, directory, extra=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cube = np.ascontiguousarray(prep.cube, dtype="<f8")
    atomic_write(d / "cube.bin", cube.tobytes(), "wb")
    meta = {"cube_shape": list(cube.shape), "start": None if prep.start is None else prep.start.isoformat(),
            "config": prep.config.to_dict(), "pruned": prep.pruned}
    meta.update(extra or {})
    return save_dataset(prep.ds, d, meta)


def load_prepared(directory):
    """Returns ``(prepared, extra)``."""
    ds, extra = load_dataset(directory)
    raw = (Path(directory) / "cube.bin").read_bytes()
    cube = np.frombuffer(raw, dtype="<f8").reshape(extra["cube_shape"]).astype(float)
    start = datetime.fromisoformat(extra["start"]) if extra.get("start") else None
    return Prepared(ds, cube, start, PipelineConfig.from_dict(extra["config"]), extra.get("pruned", {})), extra


def test_actuals(prep: Prepared, part="test"):
    """Exact counts of the ``part`` targets, (N, q, p), and their interval indices."""
    t = prep.ds.t_index if part is None else prep.ds.t_index[prep.ds.split == part]
    return np.transpose(prep.cube[:, :, t], (2, 0, 1)), t


def demand_range(prep: Prepared):
    """Observed maximum and minimum over all intervals and subregions."""
    return float(prep.cube.max()), float(prep.cube.min())


# -- tuning ------------------------------------------------------------------

def _builder(kind):
    return build_cnn if kind == "cnn" else build_mlp


def make_objective(ds: DemandDataset, kind="cnn", train_options: TrainOptions | None = None, init_seed=0):
    """``theta -> best validation MSE`` (scaled units) of a freshly trained model.

    The model behind the lowest value so far is kept as ``objective.best_model``.
    """
    opts = train_options or TrainOptions(max_epochs=30, patience=5)
    grid, L = tuple(int(v) for v in ds.grid_shape), ds.look_back
    build = _builder(kind)

    def objective(theta):
        spec = spec_from_theta(theta, ds.schema, grid, L, kind)
        m = build(spec, ds.schema, np.random.default_rng(init_seed))
        m = train(m, ds, replace(opts, seed=init_seed))
        value = min(h["val_loss"] for h in m.history[1:])
        if objective.best_model is None or value < objective.best_value:
            objective.best_model, objective.best_value = m, value
        return value

    objective.best_model, objective.best_value = None, float("inf")
    return objective


def tune_model(ds: DemandDataset, strategy="bo-hier", kind="cnn", budget_init=None, budget=None, seed=0,
               space=None, partition=None, feature_selection=False, dropout_dtilde=0.5, dropout_p=0.1,
               train_options: TrainOptions | None = None, n_candidates=1000, callback=None, small=False):
    """Tune ``kind`` on ``ds`` (val split); returns ``(result, space, partition, best_model)``.

    Flat strategies spend ``budget_init`` random trials then ``budget`` BO
    trials (random search spends both on random draws).  For ``bo-hier`` the
    two numbers are per-set budgets and replace the partition's own.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if space is None:
        space, default_part = default_space(ds.schema, feature_selection, kind, small=small)
        partition = partition or default_part
    if strategy == "bo-hier":
        if partition is None:
            raise ValueError("bo-hier needs a partition")
        if budget_init is not None or budget is not None:
            k = len(partition.sets)
            partition = Partition(partition.sets,
                                  [budget_init] * k if budget_init is not None else partition.random_init,
                                  [budget] * k if budget is not None else partition.bo_iters,
                                  partition.surrogates, partition.init_random, partition.labels)
        validate_partition(partition, space)
    m = 10 if budget_init is None else int(budget_init)
    n = 20 if budget is None else int(budget)
    objective = make_objective(ds, kind, train_options, stage_seed(seed, "train"))
    rng = np.random.default_rng(stage_seed(seed, "tune"))
    if strategy == "random":
        res = random_search(objective, space, m + n, rng, callback)
    elif strategy == "bo-dropout":
        res = bo_dropout_run(objective, space, m, n, dropout_dtilde, dropout_p, rng, n_candidates, callback=callback)
    elif strategy == "bo-hier":
        res = hierarchical_bo_run(objective, space, partition, rng, n_candidates, callback=callback)
    else:
        res = bo_run(objective, space, m, n, strategy[3:], rng, n_candidates, callback=callback)
    return res, space, partition, objective.best_model


def fit_model(ds: DemandDataset, spec: ModelSpec, options: TrainOptions | None = None, seed=0):
    opts = options or TrainOptions()
    s = stage_seed(seed, "train")
    m = _builder(spec.kind)(spec, ds.schema, np.random.default_rng(s))
    return train(m, ds, replace(opts, seed=s))


# -- evaluation --------------------------------------------------------------

def _report(prep, model_id, pred, extra=None):
    actual, t = test_actuals(prep)
    y_max, y_min = demand_range(prep)
    ok = y_max > y_min
    return make_report(model_id, pred, actual, prep.config.granularity, split_id(t, prep.config.granularity),
                       y_max if ok else None, y_min if ok else None, extra)


def evaluate_model(m, prep: Prepared, model_id=None) -> EvaluationReport:
    test = prep.ds.part("test")
    pred = predict_demand(m, test)
    return _report(prep, model_id or m.spec.kind, pred, {"best_epoch": m.best_epoch})


def medic_report(prep: Prepared, weeks=4) -> EvaluationReport:
    _, t = test_actuals(prep)
    pred = medic_forecast_many(prep.cube, t, prep.config.granularity, weeks)
    return _report(prep, "medic", pred)


def global_mean_report(prep: Prepared) -> EvaluationReport:
    """Every test cell predicted by the mean training-target count."""
    train_y, _ = test_actuals(prep, "train")
    actual, _ = test_actuals(prep)
    return _report(prep, "global-mean", np.full(actual.shape, train_y.mean()))


# -- decision tree baseline --------------------------------------------------

TREE_GRID = {"max_depth": [1, 2, 3, 4, 5], "min_samples_leaf": [1, 5, 20]}


def subregion_rows(ds: DemandDataset):
    """One row per (instance, cell): the per-subregion layout the MLP uses."""
    spec = ModelSpec(kind="mlp", grid=tuple(int(v) for v in ds.grid_shape), look_back=ds.look_back, dense=[1])
    net = build_network(spec, ds.schema, np.random.default_rng(0))
    return net.mlp_rows(gather_inputs(net, ds)), ds.Y.reshape(-1)


def tree_baseline(prep: Prepared, param_grid=None, seed=0, max_depth=5):
    """Depth-limited regression tree chosen on the validation split."""
    grid = dict(param_grid or TREE_GRID)
    depths = [d for d in grid.get("max_depth", [max_depth]) if d is not None and d <= max_depth]
    if not depths:
        raise ValueError(f"tree grid has no depth <= {max_depth}")
    grid["max_depth"] = depths
    ds = prep.ds
    parts = {k: subregion_rows(ds.part(k)) for k in ("train", "val", "test")}
    params, model, rows = grid_search_trees(grid, parts["train"], parts["val"], parts["test"], "tree",
                                            stage_seed(seed, "trees"))
    test = ds.part("test")
    pred = model.predict(parts["test"][0]).reshape(test.Y.shape)
    if ds.scaler is not None:
        pred = ds.scaler.unscale_target(pred, ds.schema.demand)
    report = _report(prep, "tree", np.maximum(pred, 0.0), {"params": params})
    return report, model, rows
