"""Forecast error metrics in original data units."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

MAPE_EPS = 1e-4


@dataclass
class Metrics:
    mae: float
    rmse: float
    mape: float  # percent; NaN when every target is below MAPE_EPS

    def as_dict(self) -> dict:
        d = asdict(self)
        if math.isnan(d["mape"]):
            d["mape"] = None
        return d


def mae(y_hat, y) -> float:
    return float(np.mean(np.abs(np.asarray(y_hat) - np.asarray(y))))


def rmse(y_hat, y) -> float:
    return float(np.sqrt(np.mean((np.asarray(y_hat) - np.asarray(y)) ** 2)))


def mape(y_hat, y, eps: float = MAPE_EPS) -> float:
    """Mean |e / y| * 100 over entries with ``|y| > eps``; NaN if none qualify."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ok = np.abs(y) > eps
    if not ok.any():
        return float("nan")
    return float(np.mean(np.abs((y_hat[ok] - y[ok]) / y[ok])) * 100.0)


def compute_metrics(y_hat, y, eps: float = MAPE_EPS) -> Metrics:
    y_hat = np.asarray(y_hat)
    y = np.asarray(y)
    if y_hat.shape != y.shape:
        raise ValueError(f"prediction shape {y_hat.shape} != target shape {y.shape}")
    return Metrics(mae(y_hat, y), rmse(y_hat, y), mape(y_hat, y, eps))


def per_horizon(y_hat: np.ndarray, y: np.ndarray) -> list[Metrics]:
    """Metrics for each step along the last axis."""
    return [compute_metrics(y_hat[..., h], y[..., h]) for h in range(y.shape[-1])]


def horizon_average(y_hat: np.ndarray, y: np.ndarray) -> Metrics:
    """Headline metrics: mean of the per-horizon values."""
    hs = per_horizon(y_hat, y)
    mapes = [m.mape for m in hs if not math.isnan(m.mape)]
    return Metrics(
        float(np.mean([m.mae for m in hs])),
        float(np.mean([m.rmse for m in hs])),
        float(np.mean(mapes)) if mapes else float("nan"),
    )
