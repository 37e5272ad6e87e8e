"""Synthetic incident data with known structure.

Weather columns are generated with planted correlations (tight max/avg/min
triples, dew point tracking temperature, loosely coupled pressure), so
correlation pruning has a known answer.  Decoy series never enter the
intensity.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .core import Externals, GridSpec, IncidentRecord
from .features import check_granularity, daily_to_intervals, events_to_maps, holidays_to_flags

__all__ = ["WEATHER_COLUMNS", "Hotspot", "SynthConfig", "SynthResult", "synth_weather", "synth_generate",
           "records_from_cube"]

WEATHER_COLUMNS = (
    "temp_max", "temp_avg", "temp_min",
    "wind_max", "wind_avg", "wind_min",
    "humidity_max", "humidity_avg", "humidity_min",
    "dewpoint_max", "dewpoint_avg", "dewpoint_min",
    "pressure_max", "pressure_avg", "pressure_min",
    "precipitation",
)


@dataclass
class Hotspot:
    """Gaussian bump of ``amplitude`` incidents per hour at its centre.

    The centre starts at ``center`` (row, col) and moves by ``velocity``
    cells per day, bouncing off the grid edges.
    """

    amplitude: float = 0.5
    radius: float = 1.0
    center: tuple = (1.0, 1.0)
    velocity: tuple = (0.0, 0.0)


@dataclass
class SynthConfig:
    q: int = 6
    p: int = 4
    n_days: int = 140
    granularity: int = 8
    start: str = "2020-01-06T00:00:00+00:00"
    base_rate: float = 0.05            # incidents per cell per hour
    weekly_amp: float = 0.4
    diurnal_amp: float = 0.3
    hotspots: list = field(default_factory=lambda: [Hotspot()])
    weather: bool = True
    weather_effects: dict = field(default_factory=lambda: {"temp_max": 0.15})
    events_per_week: float = 0.0
    event_effect: float = 0.1          # extra incidents per hour per 1000 participants
    holiday_rate: float = 0.0
    holiday_effect: float = 0.3
    n_decoys: int = 0
    bbox: tuple = (47.50, 47.75, -122.45, -122.25)

    def to_dict(self):
        d = asdict(self)
        d["hotspots"] = [asdict(h) if not isinstance(h, dict) else h for h in self.hotspots]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hotspots"] = [h if isinstance(h, Hotspot) else Hotspot(**{k: tuple(v) if isinstance(v, list) else v
                                                                     for k, v in h.items()})
                         for h in d.get("hotspots", [])]
        if "bbox" in d:
            d["bbox"] = tuple(d["bbox"])
        return cls(**d)

    @property
    def grid(self):
        return GridSpec(self.q, self.p, *self.bbox)


@dataclass
class SynthResult:
    cube: np.ndarray
    intensity: np.ndarray
    externals: Externals
    grid: GridSpec
    start: datetime
    granularity: int
    daily_weather: dict
    events: list
    holidays: list
    truth: dict


def _ar1(rng, n, phi=0.7):
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0]
    s = np.sqrt(1 - phi * phi)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + s * e[i]
    return x


def synth_weather(rng, n_days):
    """Daily weather table {column: (n_days,)} plus the standardised latents."""
    doy = np.arange(n_days)
    temp = (0.8 * np.sin(2 * np.pi * (doy - 100) / 365.25) + 0.6 * _ar1(rng, n_days)) / np.sqrt(0.32 + 0.36)
    wind = _ar1(rng, n_days, 0.5)
    hum = _ar1(rng, n_days, 0.6)
    pres = _ar1(rng, n_days, 0.8)
    n = lambda s: s * rng.standard_normal(n_days)
    w = {
        "temp_max": 14 + 8 * temp + n(1.0),
        "temp_avg": 10 + 8 * temp + n(1.0),
        "temp_min": 6 + 8 * temp + n(1.0),
        "wind_max": 25 + 6 * wind + n(1.0),
        "wind_avg": 12 + 4 * wind + n(0.8),
        "wind_min": 3 + 1 * wind + n(2.0),
        "humidity_max": 88 + 6 * hum + n(1.0),
        "humidity_avg": 72 + 8 * hum + n(1.5),
        "humidity_min": 55 + 10 * hum + n(2.0),
        "dewpoint_max": 9 + 6 * temp + n(0.8),
        "dewpoint_avg": 6 + 6 * temp + n(0.8),
        "dewpoint_min": 3 + 6 * temp + n(0.8),
        "pressure_max": 1020 + 3 * pres + n(4.0),
        "pressure_avg": 1015 + 3 * pres + n(4.0),
        "pressure_min": 1010 + 3 * pres + n(4.0),
        "precipitation": np.maximum(0.0, 2.0 * hum + n(2.0)),
    }
    return {k: w[k] for k in WEATHER_COLUMNS}, {"temp": temp, "wind": wind, "humidity": hum, "pressure": pres}


def _bounce(x, n):
    # reflect a coordinate into [0, n - 1]
    span = max(n - 1, 1e-12)
    m = np.mod(x, 2 * span)
    return np.where(m > span, 2 * span - m, m)


def synth_generate(config: SynthConfig | None = None, rng=None) -> SynthResult:
    """Poisson counts around a constructed intensity; ``truth`` records its parameters."""
    cfg = config or SynthConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    g = check_granularity(cfg.granularity)
    grid = cfg.grid
    start = datetime.fromisoformat(cfg.start).astimezone(timezone.utc)
    T = cfg.n_days * 24 // g
    hours = np.arange(T) * g + g / 2.0          # interval mid-points
    days_f = hours / 24.0
    day_idx = (np.arange(T) * g) // 24

    season = (1 + cfg.weekly_amp * np.sin(2 * np.pi * hours / 168.0)) * \
        (1 + cfg.diurnal_amp * np.sin(2 * np.pi * (hours - 6) / 24.0))

    daily, latent = synth_weather(rng, cfg.n_days)
    mult = np.ones(cfg.n_days)
    for col, beta in cfg.weather_effects.items():
        v = daily[col]
        mult *= np.exp(beta * (v - v.mean()) / (v.std() + 1e-12))
    base = cfg.base_rate * season * mult[day_idx]                    # (T,)

    ii, jj = np.meshgrid(np.arange(cfg.q), np.arange(cfg.p), indexing="ij")
    rate = np.broadcast_to(base[:, None, None], (T, cfg.q, cfg.p)).copy()
    for h in cfg.hotspots:
        ci = _bounce(h.center[0] + h.velocity[0] * days_f, cfg.q)
        cj = _bounce(h.center[1] + h.velocity[1] * days_f, cfg.p)
        d2 = (ii[None] - ci[:, None, None]) ** 2 + (jj[None] - cj[:, None, None]) ** 2
        rate += h.amplitude * season[:, None, None] * np.exp(-0.5 * d2 / h.radius ** 2)

    t0_day = start.date()
    holidays = []
    if cfg.holiday_rate > 0:
        marked = np.nonzero(rng.random(cfg.n_days) < cfg.holiday_rate)[0]
        holidays = [((t0_day + timedelta(days=int(d))).isoformat(), "public") for d in marked]
    flags = holidays_to_flags(holidays, start, T, g) if holidays else {}
    if flags:
        rate *= (1 + cfg.holiday_effect * flags["holiday_public"])[:, None, None]

    events = []
    n_ev = rng.poisson(cfg.events_per_week * cfg.n_days / 7.0) if cfg.events_per_week > 0 else 0
    for _ in range(n_ev):
        t = int(rng.integers(T))
        i, j = int(rng.integers(cfg.q)), int(rng.integers(cfg.p))
        lat = grid.lat_min + (i + 0.5) * (grid.lat_max - grid.lat_min) / cfg.q
        lon = grid.lon_min + (j + 0.5) * (grid.lon_max - grid.lon_min) / cfg.p
        ts = start + timedelta(hours=int(t * g + g // 2))
        events.append((ts.isoformat(), lat, lon, float(np.round(rng.lognormal(8.0, 0.6)))))
    maps = events_to_maps(events, grid, start, T, g) if cfg.events_per_week > 0 else {}
    if maps:
        rate += cfg.event_effect * maps["events"] / 1000.0

    intensity = rate * g                                  # expected count per interval
    counts = rng.poisson(intensity).astype(float)
    cube = np.ascontiguousarray(np.transpose(counts, (1, 2, 0)))

    series = {}
    if cfg.weather:
        series.update(daily_to_intervals(
            {(t0_day + timedelta(days=d)).isoformat(): {k: daily[k][d] for k in daily} for d in range(cfg.n_days)},
            start, T, g))
    decoys = [f"decoy{k}" for k in range(cfg.n_decoys)]
    for name in decoys:
        series[name] = rng.standard_normal(T)
    truth = {
        "config": cfg.to_dict(),
        "relevant": sorted(cfg.weather_effects) + (["events"] if maps else []) + (["holiday_public"] if flags else []),
        "decoys": decoys,
        "mean_rate": float(intensity.mean()),
    }
    return SynthResult(cube, np.transpose(intensity, (1, 2, 0)), Externals(series, maps, flags), grid, start, g,
                       {(t0_day + timedelta(days=d)).isoformat(): {k: float(daily[k][d]) for k in daily}
                        for d in range(cfg.n_days)} if cfg.weather else {},
                       events, holidays, truth)


def records_from_cube(cube, grid, start, granularity, rng, category="Medic Response"):
    """Incident records whose binning reproduces ``cube`` exactly."""
    g = check_granularity(granularity)
    start = start if isinstance(start, datetime) else datetime.fromisoformat(start)
    i, j, t = np.nonzero(cube)
    reps = cube[i, j, t].astype(np.int64)
    i, j, t = np.repeat(i, reps), np.repeat(j, reps), np.repeat(t, reps)
    n = len(i)
    dlat = (grid.lat_max - grid.lat_min) / grid.q
    dlon = (grid.lon_max - grid.lon_min) / grid.p
    u = rng.uniform(0.01, 0.99, size=(n, 3))
    lat = grid.lat_min + (i + u[:, 0]) * dlat
    lon = grid.lon_min + (j + u[:, 1]) * dlon
    secs = np.floor((t + u[:, 2]) * g * 3600).astype(np.int64)
    order = np.argsort(secs, kind="stable")
    base = start.astimezone(timezone.utc)
    return [IncidentRecord(base + timedelta(seconds=int(secs[k])), float(lat[k]), float(lon[k]), category)
            for k in order]
