"""Raw incidents and externals to typed, windowed, scaled and split instances."""

from .core import (
    DEMAND,
    FEATURE_TYPES,
    GRANULARITIES,
    DemandDataset,
    Externals,
    FeatureSchema,
    FeatureSpec,
    GridSpec,
    IncidentRecord,
)
from .features import (
    PruneResult,
    Scaler,
    apply_scaler,
    bin_incidents,
    check_granularity,
    chronological_split,
    correlation_prune,
    daily_to_intervals,
    default_schema,
    events_to_maps,
    fit_scaler,
    holidays_to_flags,
    interval_starts,
    one_hot_time,
    prune_dataset,
    unscale,
    window_instances,
)
from .io import (
    atomic_write,
    load_dataset,
    read_events_csv,
    read_holidays_csv,
    read_incidents_csv,
    read_weather_csv,
    save_dataset,
    write_events_csv,
    write_holidays_csv,
    write_incidents_csv,
    write_weather_csv,
)
from .medic import medic_forecast, medic_forecast_many, medic_offsets, periods_per_week
from .synth import WEATHER_COLUMNS, Hotspot, SynthConfig, SynthResult, records_from_cube, synth_generate, synth_weather

__all__ = [name for name in dir() if not name.startswith("_")]
