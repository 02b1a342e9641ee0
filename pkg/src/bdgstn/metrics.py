"""Forecast accuracy metrics: MAE, RMSE, MAPE, PCC and CCC.

All metrics pool every (window, patch, horizon-step) entry into one sample.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import ContractError

MAPE_MIN_TARGET = 1.0
METRIC_NAMES = ("mae", "rmse", "mape", "pcc", "ccc")


class PointMetrics(NamedTuple):
    mae: float
    rmse: float
    mape: float  # percent; nan when every target is below the guard
    mape_skipped: float  # fraction of entries excluded from MAPE


class CorrMetrics(NamedTuple):
    pcc: float
    ccc: float
    degenerate: bool


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    mape: float
    pcc: float
    ccc: float
    mape_skipped: float = 0.0
    degenerate: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise ContractError(f"prediction size {pred.size} != target size {target.size}")
    if pred.size == 0:
        raise ContractError("metrics need at least one entry")
    return pred, target


def point_metrics(pred, target) -> PointMetrics:
    pred, target = _pair(pred, target)
    err = pred - target
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err ** 2)))
    keep = np.abs(target) >= MAPE_MIN_TARGET
    skipped = 1.0 - keep.mean()
    if keep.any():
        mape = float(100.0 * np.mean(np.abs(err[keep] / target[keep])))
    else:
        mape = float("nan")
    return PointMetrics(mae, rmse, mape, float(skipped))


def corr_metrics(pred, target) -> CorrMetrics:
    """Pearson and concordance correlation with population moments."""
    x, y = _pair(pred, target)
    if x.size < 2:
        raise ContractError("correlation needs at least two entries")
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx, vy = np.mean(dx ** 2), np.mean(dy ** 2)
    if vx == 0 or vy == 0:
        return CorrMetrics(0.0, 0.0, True)
    cov = np.mean(dx * dy)
    pcc = cov / np.sqrt(vx * vy)
    ccc = 2 * cov / (vx + vy + (mx - my) ** 2)
    return CorrMetrics(float(pcc), float(ccc), False)


def evaluate(pred, target) -> MetricsReport:
    pm = point_metrics(pred, target)
    cm = corr_metrics(pred, target)
    return MetricsReport(pm.mae, pm.rmse, pm.mape, cm.pcc, cm.ccc, pm.mape_skipped, cm.degenerate)


def per_step_metrics(pred, target) -> list[MetricsReport]:
    """One report per horizon step (last axis)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return [evaluate(pred[..., k], target[..., k]) for k in range(pred.shape[-1])]
