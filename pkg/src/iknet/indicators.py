"""Technical-indicator features over daily OHLCV bars.

Every indicator returns a full-length f64 array with NaN over its own
warm-up; the assembled frame flags the first 33 rows (the MACD-signal
horizon, the longest warm-up) invalid and the CSV writer omits them.

Feature list (fixed order, f=17): open, high, low, close, volume, sma_10,
ema_10, rsi_14, macd, macd_signal, macd_diff, bb_upper, bb_middle, bb_lower,
volatility_ratio, volume_change, sma_deviation. bb_middle and the 10/30-day
realized-volatility ratio are house choices; reports flag both.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from datetime import date as _date

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import MissingInputError, ValidationError

FEATURE_NAMES = (
    "open",
    "high",
    "low",
    "close",
    "volume",
    "sma_10",
    "ema_10",
    "rsi_14",
    "macd",
    "macd_signal",
    "macd_diff",
    "bb_upper",
    "bb_middle",
    "bb_lower",
    "volatility_ratio",
    "volume_change",
    "sma_deviation",
)

WARMUP_ROWS = 33


def _parse_iso_date(text: str) -> _date:
    try:
        return _date.fromisoformat(text)
    except ValueError as exc:
        raise ValidationError(f"bad ISO date {text!r}") from exc


@dataclass
class OhlcvSeries:
    """Validated daily bars; arrays share one strictly increasing date axis."""

    dates: list[str]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        n = len(self.dates)
        for name in ("open", "high", "low", "close", "volume"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, arr)
            if arr.shape != (n,):
                raise ValidationError(f"{name} length {arr.shape} != {n} dates")
        parsed = [_parse_iso_date(d) for d in self.dates]
        for prev, cur in zip(parsed, parsed[1:]):
            if cur <= prev:
                raise ValidationError(f"dates not strictly increasing at {cur.isoformat()}")
        body_max = np.maximum(self.open, self.close)
        body_min = np.minimum(self.open, self.close)
        bad = (self.high < body_max) | (body_min < self.low)
        if bad.any():
            raise ValidationError(f"OHLC order violated on {self.dates[int(np.argmax(bad))]}")
        if (np.stack([self.open, self.high, self.low, self.close]) <= 0).any():
            raise ValidationError("prices must be positive")
        if (self.volume < 0).any():
            raise ValidationError("volume must be non-negative")

    def __len__(self) -> int:
        return len(self.dates)

    def take(self, n: int) -> "OhlcvSeries":
        return OhlcvSeries(
            dates=self.dates[:n],
            open=self.open[:n].copy(),
            high=self.high[:n].copy(),
            low=self.low[:n].copy(),
            close=self.close[:n].copy(),
            volume=self.volume[:n].copy(),
        )


def load_ohlcv_csv(path: str | os.PathLike) -> OhlcvSeries:
    if not os.path.exists(path):
        raise MissingInputError(f"OHLCV file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["date", "open", "high", "low", "close", "volume"]:
            raise ValidationError(f"unexpected OHLCV header: {header}")
        rows = [row for row in reader if row]
    if not rows:
        raise ValidationError(f"no data rows in {path}")
    try:
        cols = list(zip(*[(r[0], *map(float, r[1:6])) for r in rows]))
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"malformed OHLCV row in {path}: {exc}") from exc
    return OhlcvSeries(
        dates=list(cols[0]),
        open=np.array(cols[1]),
        high=np.array(cols[2]),
        low=np.array(cols[3]),
        close=np.array(cols[4]),
        volume=np.array(cols[5]),
    )


def _nan_prefix(n: int) -> np.ndarray:
    out = np.empty(n)
    out.fill(np.nan)
    return out


def rolling_mean(x: np.ndarray, n: int) -> np.ndarray:
    out = _nan_prefix(len(x))
    if len(x) >= n:
        out[n - 1 :] = sliding_window_view(x, n).mean(axis=1)
    return out


def rolling_std(x: np.ndarray, n: int) -> np.ndarray:
    """Population standard deviation over a trailing window."""
    out = _nan_prefix(len(x))
    if len(x) >= n:
        out[n - 1 :] = sliding_window_view(x, n).std(axis=1)
    return out


def sma(close: np.ndarray, n: int = 10) -> np.ndarray:
    return rolling_mean(close, n)


def ema(close: np.ndarray, n: int = 10) -> np.ndarray:
    """Exponential moving average, seeded with the SMA of the first n values."""
    out = _nan_prefix(len(close))
    if len(close) < n:
        return out
    alpha = 2.0 / (n + 1.0)
    level = close[:n].mean()
    out[n - 1] = level
    for t in range(n, len(close)):
        level += alpha * (close[t] - level)
        out[t] = level
    return out


def rsi(close: np.ndarray, n: int = 14) -> np.ndarray:
    """Wilder RSI; a flat market reads 50 rather than NaN."""
    out = _nan_prefix(len(close))
    if len(close) < n + 1:
        return out
    delta = np.diff(close)
    gains = np.maximum(delta, 0.0)
    losses = np.maximum(-delta, 0.0)
    avg_gain = gains[:n].mean()
    avg_loss = losses[:n].mean()
    for t in range(n, len(close)):
        if t > n:
            avg_gain = (avg_gain * (n - 1) + gains[t - 1]) / n
            avg_loss = (avg_loss * (n - 1) + losses[t - 1]) / n
        if avg_loss == 0.0:
            out[t] = 50.0 if avg_gain == 0.0 else 100.0
        else:
            out[t] = 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
    return out


def macd_family(close: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(MACD, signal, MACD − signal) with the 12/26/9 horizons."""
    macd = ema(close, 12) - ema(close, 26)
    n = len(close)
    signal = _nan_prefix(n)
    if n >= 34:
        # the MACD stream begins at index 25; EMA(9) of it seeds at index 33
        start = 25
        alpha = 2.0 / 10.0
        level = macd[start : start + 9].mean()
        signal[start + 8] = level
        for t in range(start + 9, n):
            level += alpha * (macd[t] - level)
            signal[t] = level
    return macd, signal, macd - signal


def bollinger(
    close: np.ndarray, n: int = 20, k: float = 2.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    middle = rolling_mean(close, n)
    band = k * rolling_std(close, n)
    return middle + band, middle, middle - band


def auxiliary(
    close: np.ndarray, volume: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(volatility_ratio, volume_change, sma_deviation)."""
    n = len(close)
    log_ret = np.diff(np.log(close))
    short = rolling_std(log_ret, 10)
    long = rolling_std(log_ret, 30)
    ratio = _nan_prefix(n)
    # the trailing returns for day t end at log_ret[t-1]
    for t in range(30, n):
        s, l = short[t - 1], long[t - 1]
        ratio[t] = 1.0 if l == 0.0 else s / l

    change = _nan_prefix(n)
    prev = volume[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = (volume[1:] - prev) / prev
    raw[prev == 0.0] = 0.0
    change[1:] = raw

    mean10 = rolling_mean(close, 10)
    deviation = (close - mean10) / mean10
    return ratio, change, deviation


@dataclass
class IndicatorFrame:
    """N×17 feature matrix plus a validity mask over the shared date axis."""

    dates: list[str]
    features: np.ndarray  # (N, 17)
    valid: np.ndarray  # (N,) bool

    def __post_init__(self):
        if self.features.shape != (len(self.dates), len(FEATURE_NAMES)):
            raise ValidationError(
                f"feature matrix {self.features.shape} does not match "
                f"{len(self.dates)} dates x {len(FEATURE_NAMES)} features"
            )
        if not np.isfinite(self.features[self.valid]).all():
            raise ValidationError("non-finite feature on a valid row")

    def __len__(self) -> int:
        return len(self.dates)

    def column(self, name: str) -> np.ndarray:
        return self.features[:, FEATURE_NAMES.index(name)]


def compute_indicators(ohlcv: OhlcvSeries) -> IndicatorFrame:
    close, volume = ohlcv.close, ohlcv.volume
    macd, signal, diff = macd_family(close)
    upper, middle, lower = bollinger(close)
    ratio, change, deviation = auxiliary(close, volume)
    columns = [
        ohlcv.open,
        ohlcv.high,
        ohlcv.low,
        close,
        volume,
        sma(close, 10),
        ema(close, 10),
        rsi(close, 14),
        macd,
        signal,
        diff,
        upper,
        middle,
        lower,
        ratio,
        change,
        deviation,
    ]
    features = np.column_stack(columns)
    valid = np.zeros(len(ohlcv), dtype=bool)
    valid[WARMUP_ROWS:] = True
    return IndicatorFrame(dates=list(ohlcv.dates), features=features, valid=valid)


def write_indicator_csv(frame: IndicatorFrame, path: str | os.PathLike) -> None:
    """Valid rows only, shortest-round-trip decimals, no NaN ever."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("date",) + FEATURE_NAMES)
        for i in np.flatnonzero(frame.valid):
            writer.writerow([frame.dates[i]] + [repr(float(v)) for v in frame.features[i]])


def read_indicator_csv(path: str | os.PathLike) -> IndicatorFrame:
    if not os.path.exists(path):
        raise MissingInputError(f"indicator file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["date"] + list(FEATURE_NAMES):
            raise ValidationError(f"unexpected indicator header in {path}")
        dates, rows = [], []
        for row in reader:
            if not row:
                continue
            dates.append(row[0])
            rows.append([float(v) for v in row[1:]])
    if not rows:
        raise ValidationError(f"no indicator rows in {path}")
    features = np.array(rows)
    return IndicatorFrame(dates=dates, features=features, valid=np.ones(len(dates), dtype=bool))
