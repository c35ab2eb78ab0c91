"""Forecast metrics, the Diebold-Mariano test and baseline forecasters."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, InputError, ShapeError

log = logging.getLogger(__name__)

STEP_MINUTES = 5


def _pair(pred, actual):
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape:
        raise ShapeError(f"prediction shape {pred.shape} differs from actual {actual.shape}")
    if pred.size == 0:
        raise ShapeError("metrics need at least one value")
    return pred, actual


def rmse(pred, actual):
    pred, actual = _pair(pred, actual)
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def mad(pred, actual):
    pred, actual = _pair(pred, actual)
    return float(np.mean(np.abs(pred - actual)))


def mape_with_count(pred, actual):
    """MAPE in percent over positive actuals, and the number of excluded cells."""
    pred, actual = _pair(pred, actual)
    keep = actual > 0
    if not keep.any():
        raise DegenerateError("MAPE undefined: no positive actual values")
    excluded = int(actual.size - keep.sum())
    if excluded:
        log.warning("MAPE excludes %d non-positive actual values", excluded)
    return float(np.mean(np.abs(pred[keep] - actual[keep]) / actual[keep]) * 100.0), excluded


def mape(pred, actual):
    return mape_with_count(pred, actual)[0]


def mase_with_count(pred, actual):
    """MASE for (N, T) arrays, with the number of excluded constant segments.

    Per segment: summed absolute error over the mean absolute first
    difference of the actual series; averaged over segments.
    """
    pred, actual = _pair(pred, actual)
    pred, actual = np.atleast_2d(pred), np.atleast_2d(actual)
    if actual.shape[1] < 2:
        raise ShapeError("MASE needs at least two time steps per segment")
    num = np.abs(pred - actual).sum(axis=1)
    den = np.abs(np.diff(actual, axis=1)).sum(axis=1) / (actual.shape[1] - 1)
    keep = den > 0
    excluded = int((~keep).sum())
    if not keep.any():
        raise DegenerateError("MASE undefined: every segment has a constant actual series")
    if excluded:
        log.warning("MASE excludes %d constant segments", excluded)
    return float(np.mean(num[keep] / den[keep])), excluded


def mase(pred, actual):
    return mase_with_count(pred, actual)[0]


@dataclass
class HorizonReport:
    horizon_steps: int
    rmse: float
    mape: float
    mad: float
    mase: float
    per_segment_rmse: np.ndarray = field(repr=False)
    mape_excluded: int = 0
    mase_excluded: int = 0

    @property
    def horizon_min(self):
        return self.horizon_steps * STEP_MINUTES


def horizon_report(pred, actual, step):
    """Metrics at one horizon from (W, T_p, N) arrays; uses only step ``step``."""
    pred, actual = _pair(pred, actual)
    if not 1 <= step <= pred.shape[1]:
        raise InputError(f"horizon {step} outside 1..{pred.shape[1]}")
    p = pred[:, step - 1, :].T
    a = actual[:, step - 1, :].T
    mp, mp_ex = mape_with_count(p, a)
    ms, ms_ex = mase_with_count(p, a)
    return HorizonReport(step, rmse(p, a), mp, mad(p, a), ms,
                         np.sqrt(np.mean((p - a) ** 2, axis=1)), mp_ex, ms_ex)


def evaluate_horizons(pred, actual, horizons=(6, 9, 12)):
    return [horizon_report(pred, actual, h) for h in horizons]


def window_losses(pred, actual, step):
    """Per-window MSE across segments at one horizon, the DM loss series."""
    pred, actual = _pair(pred, actual)
    return np.mean((pred[:, step - 1, :] - actual[:, step - 1, :]) ** 2, axis=1)


# --------------------------------------------------------------------------
# Diebold-Mariano


@dataclass(frozen=True)
class DmResult:
    statistic: float
    p_value: float
    lag: int


def long_run_variance(d, lag):
    """Autocovariance sum with rectangular weights up to ``lag``."""
    n = d.size
    dev = d - d.mean()
    var = float(dev @ dev) / n
    for k in range(1, lag + 1):
        var += 2.0 * float(dev[k:] @ dev[:-k]) / n
    return var


def dm_test(losses_a, losses_b, lag=0):
    """Two-sided DM test on loss series ``a`` versus ``b``.

    A negative statistic means ``a`` has the smaller mean loss.
    """
    a = np.asarray(losses_a, dtype=np.float64).ravel()
    b = np.asarray(losses_b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"loss series lengths differ: {a.size} vs {b.size}")
    if not 0 <= lag < a.size:
        raise ValueError(f"lag must satisfy 0 <= lag < n={a.size}, got {lag}")
    d = a - b
    if not d.any():
        return DmResult(0.0, 1.0, lag)
    var = long_run_variance(d, lag)
    if not var > 0:
        raise DegenerateError(f"long-run variance of the loss differential is {var:.3g}; "
                              "the test is undefined (constant differential or negative estimate at this lag)")
    stat = float(d.mean() / math.sqrt(var / d.size))
    return DmResult(stat, math.erfc(abs(stat) / math.sqrt(2.0)), lag)


# --------------------------------------------------------------------------
# baselines


def baseline_ha(window, horizon):
    """Repeat the last observed speeds across the horizon.

    ``window`` is (B, h, N) or (h, N); returns (B, horizon, N) or (horizon, N).
    """
    window = np.asarray(window, dtype=np.float64)
    if window.shape[-2] < 1:
        raise ShapeError("window must contain at least one time step")
    last = window[..., -1:, :]
    reps = [1] * window.ndim
    reps[-2] = horizon
    return np.tile(last, reps)
