"""Point-forecast error metrics.

Formulas follow the usual LSF conventions: MSE/MAE plus the percentage and
scaled errors (sMAPE, MASE, ND, NRMSE). Terms with zero denominators are
skipped and counted rather than poisoning means with infinities; whole-window
degeneracies (zero naive error for MASE, zero range for NRMSE) yield NaN
sentinels. Reductions use compensated summation so results are independent
of accumulation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

METRIC_NAMES = ("mse", "mae", "smape", "mase", "nd", "nrmse")


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    return math.fsum((p - t) ** 2 for p, t in zip(pred, target)) / len(pred)


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    return math.fsum(abs(p - t) for p, t in zip(pred, target)) / len(pred)


def smape(pred: np.ndarray, target: np.ndarray) -> tuple[float, int]:
    """200/H * sum |y - yhat| / (|y| + |yhat|); zero-denominator terms skipped."""
    terms, skipped = [], 0
    for p, t in zip(pred, target):
        denom = abs(t) + abs(p)
        if denom == 0.0:
            skipped += 1
            continue
        terms.append(abs(t - p) / denom)
    if not terms:
        return math.nan, skipped
    return 200.0 * math.fsum(terms) / len(terms), skipped


def mase(pred: np.ndarray, target: np.ndarray, m: int = 1) -> float:
    """Absolute error scaled by the naive seasonal error of the target window."""
    h = len(target)
    if m < 1 or m >= h:
        raise ValueError(f"seasonal factor {m} invalid for horizon {h}")
    naive = math.fsum(abs(target[j] - target[j - m]) for j in range(m, h)) / (h - m)
    if naive == 0.0:
        return math.nan
    return math.fsum(abs(t - p) for p, t in zip(pred, target)) / h / naive


def nd(pred: np.ndarray, target: np.ndarray) -> tuple[float, int]:
    """100 * mean |(y - yhat) / y|; zero-target terms skipped."""
    terms, skipped = [], 0
    for p, t in zip(pred, target):
        if t == 0.0:
            skipped += 1
            continue
        terms.append(abs((t - p) / t))
    if not terms:
        return math.nan, skipped
    return 100.0 * math.fsum(terms) / len(terms), skipped


def nrmse(pred: np.ndarray, target: np.ndarray) -> float:
    rng = float(np.max(target) - np.min(target))
    if rng == 0.0:
        return math.nan
    return math.sqrt(mse(pred, target)) / rng


@dataclass
class MetricReport:
    mse: float = math.nan
    mae: float = math.nan
    smape: float = math.nan
    mase: float = math.nan
    nd: float = math.nan
    nrmse: float = math.nan
    n_windows: int = 0
    skipped_terms: dict = field(default_factory=dict)
    sentinel_windows: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_NAMES}


def evaluate_windows(preds: np.ndarray, targets: np.ndarray,
                     seasonal_m: int = 1) -> MetricReport:
    """Per-window metrics averaged over windows.

    NaN sentinel windows are excluded from that metric's mean and counted.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.ndim != 2:
        raise ValueError(f"expected matching [n_windows, H] arrays, "
                         f"got {preds.shape} and {targets.shape}")
    per_metric: dict[str, list[float]] = {k: [] for k in METRIC_NAMES}
    skipped = {"smape": 0, "nd": 0}
    sentinels = {k: 0 for k in METRIC_NAMES}
    for p, t in zip(preds, targets):
        values = {"mse": mse(p, t), "mae": mae(p, t),
                  "mase": mase(p, t, seasonal_m), "nrmse": nrmse(p, t)}
        values["smape"], sk = smape(p, t)
        skipped["smape"] += sk
        values["nd"], sk = nd(p, t)
        skipped["nd"] += sk
        for k, v in values.items():
            if math.isnan(v):
                sentinels[k] += 1
            else:
                per_metric[k].append(v)
    report = MetricReport(n_windows=len(preds), skipped_terms=skipped,
                          sentinel_windows=sentinels)
    for k, vals in per_metric.items():
        setattr(report, k, math.fsum(vals) / len(vals) if vals else math.nan)
    return report
