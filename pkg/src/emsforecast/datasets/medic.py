"""The industry baseline: average demand of matching periods in past weeks."""

from __future__ import annotations

import numpy as np

from ..errors import InsufficientHistory
from .features import check_granularity

__all__ = ["periods_per_week", "medic_offsets", "medic_forecast", "medic_forecast_many"]


def periods_per_week(granularity):
    return 7 * 24 // check_granularity(granularity)


def medic_offsets(granularity, weeks=4):
    """Backward offsets of the reference periods.

    The same slot in each of the ``weeks`` preceding weeks, plus the same
    weeks one year (52 weeks, so the weekday matches) earlier.
    """
    W = periods_per_week(granularity)
    k = np.arange(1, weeks + 1)
    return np.concatenate([k * W, 52 * W + k * W])


def medic_forecast(cube, t, granularity, weeks=4):
    """Per-cell mean over the reference periods of target ``t`` that exist in the cube."""
    cube = np.asarray(cube, dtype=float)
    ref = t - medic_offsets(granularity, weeks)
    ref = ref[(ref >= 0) & (ref < cube.shape[2])]
    if ref.size == 0:
        raise InsufficientHistory(f"no reference periods available for interval {t}")
    return cube[:, :, ref].mean(axis=2)


def medic_forecast_many(cube, ts, granularity, weeks=4):
    """Stack of forecasts, shape (len(ts), q, p)."""
    return np.stack([medic_forecast(cube, int(t), granularity, weeks) for t in ts])
