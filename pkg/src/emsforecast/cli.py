"""Batch command-line front end.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
failure; failures print one line to standard error.  Every command that
writes a directory also writes ``run_manifest.json`` (arguments, config
hash, versions and output digests).  ``EMSFORECAST_THREADS`` caps BLAS
threads when set before numpy is loaded.
"""

from __future__ import annotations

import os

if os.environ.get("EMSFORECAST_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["EMSFORECAST_THREADS"])

import argparse
import csv
import hashlib
import io
import json
import platform
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import EmsForecastError, NumericError, PartitionError, SpecError

__all__ = ["main", "build_parser", "ConfigError"]


class ConfigError(Exception):
    """Bad or missing configuration (exit status 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


# -- helpers -----------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (tuple, set)):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _write(path, text):
    from .datasets.io import atomic_write
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    atomic_write(path, text)
    return Path(path)


def _read_json(path, what="config"):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def _ints(text, n=None, what="value"):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated integers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{what}: expected {n} integers, got {text!r}")
    return vals


def _floats(text, n=None, what="value"):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{what}: expected {n} numbers, got {text!r}")
    return vals


def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(out_dir, args, outputs, config=None):
    """Run manifest: replaying ``argv`` with the same inputs reproduces ``outputs``."""
    import scipy
    argv = {k: v for k, v in vars(args).items() if k != "func"}
    doc = {
        "command": args.command,
        "argv": argv,
        "config": config or {},
        "config_hash": hashlib.sha256(_dump({"argv": argv, "config": config or {}}).encode()).hexdigest()[:16],
        "versions": {"emsforecast": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "outputs": {Path(p).name: _digest(p) for p in sorted(map(str, outputs))},
    }
    _write(Path(out_dir) / "run_manifest.json", _dump(doc))


def _train_options(args):
    from .model import TrainOptions
    return TrainOptions(max_epochs=args.max_epochs, patience=args.patience)


def _load_prepared(path):
    from .pipeline import load_prepared
    try:
        return load_prepared(path)[0]
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"dataset not found: {exc}") from None


def _load_model(path):
    from .model import load_model
    if not (Path(path) / "model.json").exists():
        raise FileNotFoundError(f"no model.json in {path}")
    return load_model(path)


def _check_model_data(m, prep):
    from .model import schema_hash
    missing = [n for n in m.schema.names if n not in prep.ds.schema.names]
    if missing:
        raise SpecError(f"dataset lacks features the model uses: {missing}")
    if tuple(m.spec.grid) != tuple(prep.ds.grid_shape) or m.spec.look_back != prep.ds.look_back:
        raise SpecError("model grid or look-back does not match the dataset")
    return schema_hash(m.schema)


def _report_json(report):
    return _dump(report.to_dict())


# -- commands ----------------------------------------------------------------

def cmd_synth(args):
    from .datasets import Hotspot, SynthConfig, synth_generate
    from .pipeline import raw_from_synth, save_raw, stage_seed
    if args.config:
        try:
            cfg = SynthConfig.from_dict(_read_json(args.config))
        except TypeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
    else:
        cfg = SynthConfig(q=args.q, p=args.p, n_days=args.days, granularity=args.granularity,
                          hotspots=[Hotspot(args.hotspot_amplitude, 1.0, (1.0, 1.0), tuple(args.hotspot_velocity))],
                          events_per_week=args.events_per_week, holiday_rate=args.holiday_rate)
    res = synth_generate(cfg, np.random.default_rng(stage_seed(args.seed, "synth")))
    raw = raw_from_synth(res, args.seed)
    out = Path(args.out)
    outputs = [save_raw(raw, out)]
    outputs += [p for p in (out / f for f in ("incidents.csv", "weather.csv", "events.csv", "holidays.csv")) if p.exists()]
    outputs.append(_write(out / "truth.json", _dump(res.truth)))
    _manifest(out, args, outputs, cfg.to_dict())
    print(f"wrote {len(raw.records)} incidents over {res.cube.shape[2]} intervals to {out}")


def _grid_from_args(args):
    from .datasets import GridSpec
    q, p = _ints(args.grid, 2, "--grid")
    box = _floats(args.bbox, 4, "--bbox")
    try:
        return GridSpec(q, p, *box)
    except ValueError as exc:
        raise ConfigError(f"--grid/--bbox: {exc}") from None


def cmd_ingest(args):
    from .datasets.core import _utc
    from .datasets.io import read_events_csv, read_holidays_csv, read_incidents_csv, read_weather_csv
    from .pipeline import RawData, save_raw
    grid = _grid_from_args(args)
    for label, p in (("incidents", args.incidents), ("weather", args.weather), ("events", args.events),
                     ("holidays", args.holidays)):
        if p is not None and not Path(p).exists():
            raise ConfigError(f"{label} file not found: {p}")
    recs = read_incidents_csv(args.incidents, args.category)
    if not recs:
        raise ValueError(f"{args.incidents}: no incident records")
    first = min(r.timestamp for r in recs)
    start = _utc(args.start) if args.start else datetime(first.year, first.month, first.day, tzinfo=timezone.utc)
    if args.end:
        end = _utc(args.end)
    else:
        last = max(r.timestamp for r in recs)
        end = datetime(last.year, last.month, last.day, tzinfo=timezone.utc) + timedelta(days=1)
    raw = RawData(recs, grid, start, end,
                  read_weather_csv(args.weather) if args.weather else {},
                  read_events_csv(args.events) if args.events else [],
                  read_holidays_csv(args.holidays) if args.holidays else [])
    out = Path(args.out)
    outputs = [save_raw(raw, out)]
    outputs += [p for p in (out / f for f in ("incidents.csv", "weather.csv", "events.csv", "holidays.csv")) if p.exists()]
    _manifest(out, args, outputs)
    print(f"ingested {len(recs)} incidents into {out}")


def _pipeline_config(args, granularity=None):
    from .pipeline import PipelineConfig
    if args.look_back < 1:
        raise ConfigError("--look-back must be >= 1")
    fr = _floats(args.fractions, 3, "--fractions")
    if abs(sum(fr) - 1) > 1e-9 or min(fr) <= 0:
        raise ConfigError("--fractions must be three positive numbers summing to 1")
    thr = None if args.prune_threshold is not None and args.prune_threshold < 0 else args.prune_threshold
    return PipelineConfig(granularity or args.granularity, args.look_back, tuple(fr), thr, not args.no_upsample)


def cmd_features(args):
    from .datasets import GRANULARITIES
    from .pipeline import load_raw, prepare_raw, save_prepared
    if args.granularity not in GRANULARITIES:
        raise ConfigError(f"--granularity must be one of {GRANULARITIES}")
    cfg = _pipeline_config(args)
    prep = prepare_raw(load_raw(args.raw), cfg)
    out = Path(args.out)
    outputs = [save_prepared(prep, out)]
    outputs.append(_write(out / "pruning.json", _dump(prep.pruned)))
    _manifest(out, args, outputs, cfg.to_dict())
    n = {k: int(np.sum(prep.ds.split == k)) for k in ("train", "val", "test")}
    print(f"{len(prep.ds)} instances {n}; dropped {len(prep.pruned.get('dropped', []))} correlated columns")


def cmd_tune(args):
    from .hyperopt import load_space_config, save_space_config, spec_from_theta
    from .pipeline import tune_model
    prep = _load_prepared(args.data)
    ds = prep.ds
    space = part = None
    if args.space:
        if not Path(args.space).exists():
            raise ConfigError(f"space file not found: {args.space}")
        try:
            space, part, _ = load_space_config(args.space)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{args.space}: malformed space ({exc})") from None
    if args.strategy == "bo-dropout" and not (0 < args.dropout_dtilde and 0 <= args.dropout_p <= 1):
        raise ConfigError("--dropout-dtilde must be > 0 and --dropout-p in [0, 1]")
    res, space, part, _ = tune_model(ds, args.strategy, args.kind, args.budget_init, args.budget, args.seed, space,
                                     part, args.feature_selection, args.dropout_dtilde, args.dropout_p,
                                     _train_options(args), args.candidates, small=args.small)
    spec = spec_from_theta(res.incumbent, ds.schema, tuple(int(v) for v in ds.grid_shape), ds.look_back, args.kind)
    out = Path(args.out)
    outputs = [_write(out / "trace.csv", res.trace_csv()),
               _write(out / "best_spec.json", spec.to_json() + "\n"),
               _write(out / "tune.json", _dump({"best_value": res.best_value, "incumbent": res.incumbent,
                                                 "n_trials": len(res.trials),
                                                 "n_failed": sum(t.failed for t in res.trials),
                                                 "strategy": args.strategy}))]
    save_space_config(out / "space.json", space, part)
    outputs.append(out / "space.json")
    _manifest(out, args, outputs)
    print(f"best validation MSE {res.best_value:.6g} after {len(res.trials)} trials")


def cmd_train(args):
    from .model import ModelSpec, save_model
    from .pipeline import fit_model
    doc = _read_json(args.spec, "spec")
    try:
        spec = ModelSpec.from_dict(doc)
        spec.validate()
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"{args.spec}: malformed spec ({exc})") from None
    prep = _load_prepared(args.data)
    if tuple(spec.grid) != tuple(prep.ds.grid_shape) or spec.look_back != prep.ds.look_back:
        raise ConfigError(f"spec grid {tuple(spec.grid)} / look-back {spec.look_back} do not match the dataset "
                          f"({tuple(prep.ds.grid_shape)}, {prep.ds.look_back})")
    m = fit_model(prep.ds, spec, _train_options(args), args.seed)
    out = Path(args.out)
    save_model(m, out)
    hist = io.StringIO()
    w = csv.writer(hist, lineterminator="\n")
    w.writerow(("epoch", "train_loss", "val_loss"))
    for h in m.history:
        w.writerow((h["epoch"], repr(float(h["train_loss"])), repr(float(h["val_loss"]))))
    outputs = [out / "model.json", out / "weights.bin", _write(out / "history.csv", hist.getvalue())]
    _manifest(out, args, outputs, spec.to_dict())
    print(f"trained {m.spec.kind}: best epoch {m.best_epoch}, val MSE {m.history[m.best_epoch]['val_loss']:.6g}")


def cmd_predict(args):
    from .model import predict_demand
    m = _load_model(args.model)
    prep = _load_prepared(args.data)
    _check_model_data(m, prep)
    ds = prep.ds if args.part == "all" else prep.ds.part(args.part)
    pred = predict_demand(m, ds)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("t_index", "time", "row", "col", "prediction"))
    for k in range(len(ds)):
        for i in range(pred.shape[1]):
            for j in range(pred.shape[2]):
                w.writerow((int(ds.t_index[k]), str(ds.times[k]), i, j, repr(float(pred[k, i, j]))))
    path = _write(args.out, buf.getvalue())
    _manifest(path.parent, args, [path])
    print(f"wrote {pred.size} predictions to {path}")


def _baselines(prep, names, seed):
    from .pipeline import global_mean_report, medic_report, tree_baseline
    out = []
    for n in names:
        if n == "medic":
            out.append(medic_report(prep))
        elif n == "mean":
            out.append(global_mean_report(prep))
        elif n == "tree":
            out.append(tree_baseline(prep, seed=seed)[0])
        else:
            raise ConfigError(f"unknown baseline {n!r}; choose from medic, mean, tree")
    return out


def cmd_evaluate(args):
    from .eval import compare_models
    from .pipeline import evaluate_model
    m = _load_model(args.model)
    prep = _load_prepared(args.data)
    _check_model_data(m, prep)
    rep = evaluate_model(m, prep, args.model_id or m.spec.kind)
    others = _baselines(prep, [b for b in args.baselines.split(",") if b], args.seed) if args.baselines else []
    if others:
        rep.comparison = compare_models([rep] + others)
    path = _write(args.out, _report_json(rep))
    _manifest(path.parent, args, [path])
    print(f"{rep.model_id}: test MSE {rep.mse:.6g}" + (f", NRMSE {rep.nrmse:.6g}" if rep.nrmse is not None else ""))


def cmd_medic(args):
    from .eval import compare_models
    prep = _load_prepared(args.data)
    rep, mean = _baselines(prep, ["medic", "mean"], args.seed)
    rep.comparison = compare_models([rep, mean])
    path = _write(args.out, _report_json(rep))
    _manifest(path.parent, args, [path])
    print(f"medic: test MSE {rep.mse:.6g} (global mean {mean.mse:.6g})")


def cmd_shap(args):
    from .eval import AttributionConfig, model_attribution
    from .pipeline import stage_seed
    m = _load_model(args.model)
    prep = _load_prepared(args.data)
    _check_model_data(m, prep)
    try:
        cfg = AttributionConfig(args.background, args.samples, args.permutations, stage_seed(args.seed, "shap"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cell = tuple(_ints(args.cell, 2, "--cell")) if args.cell else None
    if cell is not None and not (0 <= cell[0] < m.spec.grid[0] and 0 <= cell[1] < m.spec.grid[1]):
        raise ConfigError(f"--cell {cell} outside the {tuple(m.spec.grid)} grid")
    results, table = model_attribution(m, prep.ds, cfg, cell)
    doc = {"target": "cell" if cell else "heatmap_sum", "cell": cell, "table": table,
           "samples": [{"base": r.base, "fx": r.fx, "phi": r.as_dict(),
                        "stderr": {n: float(v) for n, v in zip(r.names, r.stderr)}} for r in results]}
    out = Path(args.out)
    buf = io.StringIO()
    w = csv.DictWriter(buf, ("feature", "mean_phi", "mean_abs_phi"), lineterminator="\n")
    w.writeheader()
    for row in table:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    outputs = [_write(out / "shap.json", _dump(doc)), _write(out / "shap.csv", buf.getvalue())]
    _manifest(out, args, outputs, {"attribution": vars(cfg)})
    print("top features: " + ", ".join(f"{r['feature']} ({r['mean_abs_phi']:.3g})" for r in table[:3]))


def cmd_sensitivity(args):
    from .datasets import GRANULARITIES
    from .eval import sensitivity_csv, sensitivity_run
    from .model import ModelSpec
    from .pipeline import load_raw
    gs = _ints(args.granularities, what="--granularities")
    bad = [g for g in gs if g not in GRANULARITIES]
    if bad or not gs:
        raise ConfigError(f"--granularities must be drawn from {GRANULARITIES}")
    models = {}
    if args.spec:
        try:
            models[args.model_id] = ModelSpec.from_dict(_read_json(args.spec, "spec"))
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"{args.spec}: malformed spec ({exc})") from None
    raw = load_raw(args.raw)
    rows = sensitivity_run(raw, gs, _pipeline_config(args, gs[0]), models, _train_options(args), args.seed,
                           tree=args.tree)
    out = Path(args.out)
    outputs = [_write(out / "sensitivity.csv", sensitivity_csv(rows)), _write(out / "sensitivity.json", _dump(rows))]
    _manifest(out, args, outputs)
    print(f"{len(rows)} rows for granularities {gs}")


def cmd_report(args):
    from .eval import EvaluationReport, compare_models
    reps, embedded = [], []
    for p in args.inputs:
        d = _read_json(p, "report")
        try:
            reps.append(EvaluationReport.from_dict(d))
        except TypeError as exc:
            raise ConfigError(f"{p}: not an evaluation report ({exc})") from None
        embedded += [(row, d) for row in d.get("comparison") or []]
    for row, d in embedded:        # baselines ranked inside a report but not passed on their own
        if all(r.model_id != row["model_id"] for r in reps):
            reps.append(EvaluationReport(row["model_id"], d["granularity"], row["mse"], row["nrmse"], None, None,
                                         0, 0, d["split"]))
    table = compare_models(reps)
    out = Path(args.out)
    buf = io.StringIO()
    w = csv.DictWriter(buf, ("rank", "model_id", "mse", "nrmse", "best_margin_pct"), lineterminator="\n")
    w.writeheader()
    for row in table:
        w.writerow({k: repr(v) if isinstance(v, float) else ("" if v is None else v) for k, v in row.items()})
    outputs = [_write(out / "comparison.csv", buf.getvalue()), _write(out / "comparison.json", _dump(table))]
    _manifest(out, args, outputs)
    for row in table:
        print(f"{row['rank']}. {row['model_id']}: MSE {row['mse']:.6g} (leader margin {row['best_margin_pct']:.2f} %)")


def cmd_benchmark_trees(args):
    from .pipeline import subregion_rows, stage_seed
    from .trees import grid_search_trees
    grid = _read_json(args.grid, "grid") if args.grid else {"max_depth": [1, 2, 3, 4, 5], "min_samples_leaf": [1, 5]}
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("tree grid must be a non-empty JSON object of lists")
    prep = _load_prepared(args.data)
    parts = {k: subregion_rows(prep.ds.part(k)) for k in ("train", "val", "test")}
    try:
        params, model, rows = grid_search_trees(grid, parts["train"], parts["val"], parts["test"], args.kind,
                                                stage_seed(args.seed, "trees"))
    except TypeError as exc:
        raise ConfigError(f"tree grid: {exc}") from None
    out = Path(args.out)
    outputs = [_write(out / "trees.json", _dump({"kind": args.kind, "best": params, "rows": rows}))]
    _manifest(out, args, outputs)
    print(f"best {args.kind} {params}: val MSE {min(r['val_mse'] for r in rows):.6g} (scaled units)")


# -- parser ------------------------------------------------------------------

def _common(p, out_help="output directory"):
    p.add_argument("--seed", type=int, default=0, help="global seed; stages derive their own (default 0)")
    p.add_argument("--out", required=True, help=out_help)


def _train_flags(p):
    p.add_argument("--max-epochs", type=int, default=300, help="epoch cap per training run (default 300)")
    p.add_argument("--patience", type=int, default=20, help="early-stopping patience in epochs (default 20)")


def _dataset_flags(p):
    p.add_argument("--granularity", type=int, default=8, help="interval length in hours: 2, 4, 8, 12 or 24")
    p.add_argument("--look-back", type=int, default=6, help="number of past intervals L (default 6)")
    p.add_argument("--fractions", default="0.6,0.2,0.2", help="chronological train,val,test fractions")
    p.add_argument("--prune-threshold", type=float, default=0.8,
                   help="drop weather columns with |rho| above this on train; negative disables (default 0.8)")
    p.add_argument("--no-upsample", action="store_true", help="feed weather histories flat instead of upsampled")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="emsforecast", description="Spatio-temporal demand forecasting pipeline.")
    ap.add_argument("--version", action="version", version=f"emsforecast {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic incident dataset with known structure")
    _common(p)
    p.add_argument("--config", help="JSON synthetic-data config (overrides the flags below)")
    p.add_argument("--q", type=int, default=6, help="grid rows (default 6)")
    p.add_argument("--p", type=int, default=4, help="grid columns (default 4)")
    p.add_argument("--days", type=int, default=140, help="number of days (default 140)")
    p.add_argument("--granularity", type=int, default=2, help="native interval length in hours (default 2)")
    p.add_argument("--hotspot-amplitude", type=float, default=1.0, help="hot-spot peak incidents per hour")
    p.add_argument("--hotspot-velocity", type=float, nargs=2, default=(1.0, 0.6), metavar=("ROWS", "COLS"),
                   help="hot-spot drift in cells per day (default 1.0 0.6)")
    p.add_argument("--events-per-week", type=float, default=0.0, help="mean planned events per week")
    p.add_argument("--holiday-rate", type=float, default=0.0, help="probability that a day is a holiday")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="bin-ready copy of raw incident, weather, event and holiday CSVs")
    _common(p)
    p.add_argument("--incidents", required=True, help="CSV timestamp,latitude,longitude,category")
    p.add_argument("--weather", help="daily weather CSV (date plus one column per measure)")
    p.add_argument("--events", help="CSV timestamp,latitude,longitude,expected_participants")
    p.add_argument("--holidays", help="CSV date,kind")
    p.add_argument("--category", help="keep only incidents of this category")
    p.add_argument("--grid", default="11,6", help="rows,cols of the subregion grid (default 11,6)")
    p.add_argument("--bbox", required=True, help="lat_min,lat_max,lon_min,lon_max of the forecast region")
    p.add_argument("--start", help="ISO-8601 start (default: midnight UTC of the first incident)")
    p.add_argument("--end", help="ISO-8601 end, exclusive (default: midnight after the last incident)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("features", help="bin, window, split, prune and scale into a dataset directory")
    _common(p)
    p.add_argument("--raw", required=True, help="directory written by ingest or synth")
    _dataset_flags(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("tune", help="hyperparameter search for a CNN or MLP")
    _common(p)
    p.add_argument("--data", required=True, help="dataset directory from features")
    p.add_argument("--space", help="JSON space/partition config (default: built-in space)")
    p.add_argument("--strategy", default="bo-hier", choices=["random", "bo-gp", "bo-rf", "bo-et", "bo-dropout",
                                                             "bo-hier"], help="search strategy (default bo-hier)")
    p.add_argument("--budget-init", type=int, default=None,
                   help="random initial trials (per set for bo-hier; default 10 flat, 25 per set)")
    p.add_argument("--budget", type=int, default=None,
                   help="BO iterations (per set for bo-hier; default 20 flat, 250 per set)")
    p.add_argument("--dropout-dtilde", type=float, default=0.5,
                   help="bo-dropout: dimensions per step, a count if >= 1 else a fraction (default 0.5)")
    p.add_argument("--dropout-p", type=float, default=0.1,
                   help="bo-dropout: probability of random fill for dropped dimensions (default 0.1)")
    p.add_argument("--feature-selection", action="store_true", help="add one binary flag per optional feature")
    p.add_argument("--kind", default="cnn", choices=["cnn", "mlp"], help="model family (default cnn)")
    p.add_argument("--small", action="store_true", help="narrow architecture domains")
    p.add_argument("--candidates", type=int, default=1000, help="acquisition candidates per step (default 1000)")
    p.add_argument("--max-epochs", type=int, default=30, help="epoch cap per trial (default 30)")
    p.add_argument("--patience", type=int, default=5, help="early-stopping patience per trial (default 5)")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("train", help="train one model from a spec")
    _common(p, "model directory")
    p.add_argument("--spec", required=True, help="JSON model spec (e.g. best_spec.json from tune)")
    p.add_argument("--data", required=True, help="dataset directory from features")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write predicted demand per interval and subregion")
    _common(p, "output CSV path")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--part", default="test", choices=["train", "val", "test", "all"], help="split to predict")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="test-split metrics, optionally ranked against baselines")
    _common(p, "output report JSON path")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model-id", help="name in the report (default: model kind)")
    p.add_argument("--baselines", default="", help="comma list from medic, mean, tree")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("medic", help="Medic baseline report on the test split")
    _common(p, "output report JSON path")
    p.add_argument("--data", required=True, help="dataset directory")
    p.set_defaults(func=cmd_medic)

    p = sub.add_parser("shap", help="Shapley attribution of test predictions")
    _common(p)
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--background", type=int, default=300, help="training periods in the background set")
    p.add_argument("--samples", type=int, default=50, help="test periods to explain")
    p.add_argument("--permutations", type=int, default=100, help="sampled permutations per period")
    p.add_argument("--cell", help="row,col to attribute one subregion instead of the heatmap sum")
    p.set_defaults(func=cmd_shap)

    p = sub.add_parser("sensitivity", help="re-run baselines and a model per granularity")
    _common(p)
    p.add_argument("--raw", required=True, help="directory written by ingest or synth")
    p.add_argument("--granularities", default="2,4,8,12,24", help="comma list of interval lengths in hours")
    p.add_argument("--spec", help="JSON model spec to retrain at each granularity")
    p.add_argument("--model-id", default="cnn", help="model id used in the output rows (default cnn)")
    p.add_argument("--tree", action="store_true", help="include the depth-limited tree baseline")
    _dataset_flags(p)
    _train_flags(p)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("report", help="rank evaluation reports scored on the same test split")
    _common(p)
    p.add_argument("inputs", nargs="+", help="report JSON files")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("benchmark", help="benchmark suites")
    bsub = p.add_subparsers(dest="suite", required=True, parser_class=_Parser)
    b = bsub.add_parser("trees", help="grid search regression trees or forests on per-subregion rows")
    _common(b)
    b.add_argument("--data", required=True, help="dataset directory")
    b.add_argument("--grid", help="JSON object mapping parameter -> list of values")
    b.add_argument("--kind", default="tree", choices=["tree", "forest"], help="model family (default tree)")
    b.set_defaults(func=cmd_benchmark_trees)
    return ap


def _exit_code(exc) -> int:
    if isinstance(exc, (ConfigError, SpecError, PartitionError)):
        return 1
    if isinstance(exc, (NumericError, FloatingPointError, ArithmeticError)):
        return 3
    return 2


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "benchmark":
            args.command = f"benchmark {args.suite}"
        args.func(args)
    except SystemExit as exc:          # --help and --version
        return int(exc.code or 0)
    except (ConfigError, EmsForecastError, ValueError, KeyError, OSError, ArithmeticError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"emsforecast: error: {msg}", file=sys.stderr)
        return _exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
