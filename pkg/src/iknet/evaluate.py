"""Forecast metrics, the Diebold-Mariano comparison, and two baselines.

Metrics operate on ForecastSeries only, which carry raw index points; that
forces every caller to inverse-transform before scoring, so no scaled value
can leak into a reported RMSE. The DM statistic uses the lag-0 long-run
variance (every forecast here is one-step) and the sign convention that a
negative statistic favors the first model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date as _date

import numpy as np

from .dataset import Sample, fit_scaler
from .errors import ValidationError


@dataclass
class ForecastSeries:
    dates: list[str]
    y_hat: np.ndarray
    y_true: np.ndarray
    anchor_close: np.ndarray  # prior close per date, for persistence/trading
    model: str = ""
    fold: str = ""

    def __post_init__(self):
        n = len(self.dates)
        self.y_hat = np.asarray(self.y_hat, dtype=np.float64)
        self.y_true = np.asarray(self.y_true, dtype=np.float64)
        self.anchor_close = np.asarray(self.anchor_close, dtype=np.float64)
        for name in ("y_hat", "y_true", "anchor_close"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValidationError(f"{name} shape {arr.shape} != ({n},)")
            if not np.isfinite(arr).all():
                raise ValidationError(f"non-finite values in {name}")
        for prev, cur in zip(self.dates, self.dates[1:]):
            if cur <= prev:
                raise ValidationError(f"forecast dates not strictly increasing at {cur}")
        for d in self.dates:
            _date.fromisoformat(d)

    def __len__(self) -> int:
        return len(self.dates)


def _require_series(series) -> ForecastSeries:
    if not isinstance(series, ForecastSeries):
        raise TypeError(
            f"expected a ForecastSeries in index points, got {type(series).__name__}"
        )
    if len(series) == 0:
        raise ValidationError("empty forecast series")
    return series


def rmse(series: ForecastSeries) -> float:
    series = _require_series(series)
    return float(np.sqrt(np.mean(np.square(series.y_hat - series.y_true))))


def smape(series: ForecastSeries) -> float:
    """(100/N) * sum |yhat-y| / ((|y|+|yhat|)/2), in percent."""
    series = _require_series(series)
    denom = (np.abs(series.y_true) + np.abs(series.y_hat)) / 2.0
    if (denom == 0.0).any():
        raise ValidationError("SMAPE undefined where both forecast and truth are 0")
    return float(100.0 * np.mean(np.abs(series.y_hat - series.y_true) / denom))


@dataclass
class DmResult:
    statistic: float
    p_value: float | None
    loss: str
    horizon: int
    n: int
    degenerate: bool
    harvey: bool = False


_LOSSES = {
    "squared": lambda e: np.square(e),
    "absolute": lambda e: np.abs(e),
}


def dm_test(
    series_a: ForecastSeries,
    series_b: ForecastSeries,
    loss: str = "squared",
    harvey: bool = False,
) -> DmResult:
    """Negative statistic: model a carries the smaller loss."""
    a, b = _require_series(series_a), _require_series(series_b)
    if a.dates != b.dates:
        raise ValidationError("DM test needs identical forecast dates")
    if not np.array_equal(a.y_true, b.y_true):
        raise ValidationError("DM test needs identical target values")
    if len(a) < 10:
        raise ValidationError(f"DM test needs >= 10 points, got {len(a)}")
    if loss not in _LOSSES:
        raise ValidationError(f"loss must be one of {sorted(_LOSSES)}")
    fn = _LOSSES[loss]
    d = fn(a.y_hat - a.y_true) - fn(b.y_hat - b.y_true)
    n = len(d)
    mean = float(d.mean())
    var = float(d.var())  # lag-0 long-run variance for 1-step forecasts
    if var == 0.0:
        stat = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
        return DmResult(stat, None, loss, 1, n, degenerate=True, harvey=harvey)
    stat = mean / math.sqrt(var / n)
    if harvey:
        stat *= math.sqrt((n - 1) / n)
    p = math.erfc(abs(stat) / math.sqrt(2.0))
    return DmResult(stat, p, loss, 1, n, degenerate=False, harvey=harvey)


# ---------------------------------------------------------------------------
# baselines


def _flatten(samples: list[Sample], scaler) -> np.ndarray:
    return np.stack([scaler.apply_window(s.x_tech).reshape(-1) for s in samples])


def _ridge_solve(X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    gram = X.T @ X + lam * np.eye(X.shape[1])
    return np.linalg.solve(gram, X.T @ y)


def ridge_baseline(
    train: list[Sample],
    test: list[Sample],
    lambdas: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0),
    fold: str = "",
) -> ForecastSeries:
    """Closed-form ridge on flattened scaled windows.

    The penalty is picked on a chronological last-20% holdout of the training
    split, then the model refits on all of it.
    """
    if not train:
        raise ValidationError("ridge baseline needs a training split")
    if not lambdas or any(l <= 0 for l in lambdas):
        raise ValidationError("ridge lambdas must be positive")
    ordered = sorted(train, key=lambda s: s.target_date)
    scaler = fit_scaler(ordered)
    X = _flatten(ordered, scaler)
    y = scaler.apply_target(np.array([s.y for s in ordered]))
    cut = max(1, int(round(len(ordered) * 0.8)))
    if cut == len(ordered):
        cut = len(ordered) - 1
    best_lam, best_err = None, math.inf
    for lam in lambdas:
        w = _ridge_solve(X[:cut], y[:cut], lam)
        err = float(np.sqrt(np.mean(np.square(X[cut:] @ w - y[cut:]))))
        if err < best_err:
            best_lam, best_err = lam, err
    w = _ridge_solve(X, y, best_lam)
    test_ordered = sorted(test, key=lambda s: s.target_date)
    preds = scaler.invert_target(_flatten(test_ordered, scaler) @ w)
    return ForecastSeries(
        dates=[s.target_date for s in test_ordered],
        y_hat=preds,
        y_true=np.array([s.y for s in test_ordered]),
        anchor_close=np.array([s.anchor_close for s in test_ordered]),
        model=f"ridge(lambda={best_lam})",
        fold=fold,
    )


def persistence_baseline(test: list[Sample], fold: str = "") -> ForecastSeries:
    """Tomorrow equals today."""
    if not test:
        raise ValidationError("persistence baseline needs test samples")
    ordered = sorted(test, key=lambda s: s.target_date)
    return ForecastSeries(
        dates=[s.target_date for s in ordered],
        y_hat=np.array([s.anchor_close for s in ordered]),
        y_true=np.array([s.y for s in ordered]),
        anchor_close=np.array([s.anchor_close for s in ordered]),
        model="persistence",
        fold=fold,
    )
