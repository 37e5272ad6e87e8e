"""CSV ingestion and the on-disk dataset cache (manifest JSON + raw blobs)."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import DemandDataset, FeatureSchema, IncidentRecord
from .features import Scaler

__all__ = [
    "atomic_write",
    "read_incidents_csv",
    "write_incidents_csv",
    "read_weather_csv",
    "write_weather_csv",
    "read_events_csv",
    "write_events_csv",
    "read_holidays_csv",
    "write_holidays_csv",
    "save_dataset",
    "load_dataset",
]


def atomic_write(path, data, mode="w"):
    """Write to a temporary sibling and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _rows(path, required):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        miss = [c for c in required if c not in cols]
        if miss:
            raise ValueError(f"{path}: missing columns {miss}")
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def read_incidents_csv(path, category=None):
    """Rows ``timestamp,latitude,longitude,category``; optionally keep one category."""
    out = []
    for lineno, row in _rows(path, ("timestamp", "latitude", "longitude", "category")):
        if category is not None and row["category"] != category:
            continue
        try:
            out.append(IncidentRecord(row["timestamp"], float(row["latitude"]), float(row["longitude"]),
                                      row["category"]))
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: {e}") from None
    return out


def _csv_text(header, rows):
    import io
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_incidents_csv(path, records):
    rows = [(r.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"), repr(r.latitude), repr(r.longitude), r.category)
            for r in records]
    atomic_write(path, _csv_text(("timestamp", "latitude", "longitude", "category"), rows))


def read_weather_csv(path):
    """One row per day: ``date`` plus numeric columns -> {date: {col: value}}."""
    out = {}
    for lineno, row in _rows(path, ("date",)):
        try:
            out[row["date"]] = {k: float(v) for k, v in row.items() if k != "date"}
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: {e}") from None
    return out


def write_weather_csv(path, daily):
    days = sorted(daily)
    cols = list(daily[days[0]]) if days else []
    atomic_write(path, _csv_text(["date"] + cols, [[d] + [repr(daily[d][c]) for c in cols] for d in days]))


def read_events_csv(path):
    """Rows ``timestamp,latitude,longitude,expected_participants`` -> list of tuples."""
    out = []
    for lineno, row in _rows(path, ("timestamp", "latitude", "longitude", "expected_participants")):
        try:
            out.append((row["timestamp"], float(row["latitude"]), float(row["longitude"]),
                        float(row["expected_participants"])))
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: {e}") from None
    return out


def write_events_csv(path, events):
    atomic_write(path, _csv_text(("timestamp", "latitude", "longitude", "expected_participants"),
                                 [(e[0], repr(e[1]), repr(e[2]), repr(e[3])) for e in events]))


def read_holidays_csv(path):
    return [(row["date"], row["kind"]) for _, row in _rows(path, ("date", "kind"))]


def write_holidays_csv(path, holidays):
    atomic_write(path, _csv_text(("date", "kind"), list(holidays)))


# -- dataset cache -----------------------------------------------------------

_GROUPS = ("maps2d", "series", "onehots", "scalars")


def save_dataset(ds: DemandDataset, directory, extra=None):
    """Write ``manifest.json`` plus one little-endian float64 blob per array."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    blobs = {}

    def put(key, arr):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        fname = f"{key}.bin"
        atomic_write(d / fname, arr.tobytes(), "wb")
        blobs[key] = {"file": fname, "shape": list(arr.shape)}

    put("X3D", ds.X3D)
    put("Y", ds.Y)
    for g in _GROUPS:
        for k, v in getattr(ds, g).items():
            put(f"{g}.{k}", v)
    manifest = {
        "format": "emsforecast-dataset/1",
        "granularity": ds.granularity,
        "look_back": ds.look_back,
        "schema": ds.schema.to_dict(),
        "times": [str(t) for t in ds.times.astype("datetime64[s]")],
        "t_index": ds.t_index.astype(int).tolist(),
        "split": None if ds.split is None else ds.split.tolist(),
        "scaler": None if ds.scaler is None else ds.scaler.to_dict(),
        "groups": {g: list(getattr(ds, g)) for g in _GROUPS},
        "blobs": blobs,
        "extra": extra or {},
    }
    atomic_write(d / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
    return d / "manifest.json"


def load_dataset(directory):
    d = Path(directory)
    try:
        m = json.loads((d / "manifest.json").read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"no dataset manifest in {d}") from None
    if m.get("format") != "emsforecast-dataset/1":
        raise ValueError(f"{d}: unsupported dataset format {m.get('format')!r}")

    def get(key):
        b = m["blobs"][key]
        raw = (d / b["file"]).read_bytes()
        arr = np.frombuffer(raw, dtype="<f8")
        if arr.size != int(np.prod(b["shape"])):
            raise ValueError(f"{d / b['file']}: blob size does not match shape {b['shape']}")
        return arr.reshape(b["shape"]).astype(float)

    groups = {g: {k: get(f"{g}.{k}") for k in m["groups"][g]} for g in _GROUPS}
    ds = DemandDataset(
        get("X3D"), get("Y"), groups["maps2d"], groups["series"], groups["onehots"], groups["scalars"],
        np.array(m["times"], dtype="datetime64[s]"), np.array(m["t_index"], dtype=np.int64),
        int(m["granularity"]), int(m["look_back"]), FeatureSchema.from_dict(m["schema"]),
        None if m["split"] is None else np.array(m["split"], dtype="<U5"),
        None if m["scaler"] is None else Scaler.from_dict(m["scaler"]),
    )
    return ds, m.get("extra", {})
