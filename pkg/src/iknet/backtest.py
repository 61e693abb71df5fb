"""Long/flat trading simulation with per-side transaction costs.

The strategy holds the index on days the forecast calls higher than the
prior close and sits in cash otherwise. Returns accrue in log space, costs
enter as ln(1-c) per side, and the cumulative figure is the exponentiated
sum, so the ledger composes multiplicatively no matter how days are
partitioned. Exit costs book on the first flat row after a long run; a
position still open at the end of the series is liquidated on the final
row. The paper_literal mode additionally zeroes the gross return on long
days whose realized move disagrees with the call, which can only raise the
total; it exists for comparison and reports must name the mode used.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .evaluate import ForecastSeries, _require_series

MODES = ("standard", "paper_literal")
TRADING_DAYS_PER_YEAR = 252


@dataclass(frozen=True)
class StrategyConfig:
    cost: float = 0.003
    mode: str = "standard"

    def __post_init__(self):
        if not (0.0 <= self.cost < 1.0):
            raise ValidationError(f"cost must be in [0, 1), got {self.cost}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class TradeLedger:
    """Day-by-day record of one simulation.

    gross_log holds the pre-cost log return of each day (zero on flat
    days), cost_log the ln(1-c) charges booked that day.
    """

    dates: list[str]
    positions: list[str]
    gross_log: np.ndarray
    cost_log: np.ndarray
    closes: np.ndarray  # underlying path, one price longer than dates
    cost: float
    mode: str
    n_trades: int

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def net_log(self) -> np.ndarray:
        return self.gross_log + self.cost_log

    @property
    def cumulative_return_pct(self) -> float:
        return float((math.exp(float(self.net_log.sum())) - 1.0) * 100.0)

    def summary(self) -> dict:
        ratio = sharpe(self) if len(self) >= 2 else None
        return {
            "mode": self.mode,
            "cost": self.cost,
            "n_days": len(self),
            "n_trades": self.n_trades,
            "cumulative_return_pct": self.cumulative_return_pct,
            "sharpe": ratio,
            "sharpe_undefined": ratio is None,
            "hv_pct": hv(self.closes) if len(self.closes) >= 3 else None,
        }


def simulate(series: ForecastSeries, config: StrategyConfig | None = None) -> TradeLedger:
    """Run the long/flat rule over an aligned forecast series.

    Day t is held long when yhat[t] > anchor_close[t]; held days earn
    ln(y_true[t]/anchor_close[t]). The series must chain: each row's
    anchor_close is the prior row's realized close.
    """
    series = _require_series(series)
    config = config or StrategyConfig()
    anchor = series.anchor_close
    realized = series.y_true
    for i in range(len(series) - 1):
        tol = 1e-9 * max(1.0, abs(realized[i]))
        if abs(anchor[i + 1] - realized[i]) > tol:
            raise ValidationError(
                f"misaligned prices at {series.dates[i + 1]}: "
                f"anchor {anchor[i + 1]!r} != prior close {realized[i]!r}"
            )
    if (anchor <= 0).any() or (realized <= 0).any():
        raise ValidationError("prices must be positive")

    side = math.log(1.0 - config.cost)
    n = len(series)
    gross = np.zeros(n)
    charges = np.zeros(n)
    positions = []
    n_trades = 0
    was_long = False
    for i in range(n):
        is_long = series.y_hat[i] > anchor[i]
        if is_long:
            r = math.log(realized[i] / anchor[i])
            if config.mode == "paper_literal" and realized[i] <= anchor[i]:
                r = 0.0
            gross[i] = r
            if not was_long:
                charges[i] += side
                n_trades += 1
        elif was_long:
            charges[i] += side
        positions.append("long" if is_long else "flat")
        was_long = is_long
    if was_long:
        charges[n - 1] += side

    closes = np.concatenate(([anchor[0]], realized))
    return TradeLedger(
        dates=list(series.dates),
        positions=positions,
        gross_log=gross,
        cost_log=charges,
        closes=closes,
        cost=config.cost,
        mode=config.mode,
        n_trades=n_trades,
    )


def sharpe(ledger: TradeLedger) -> float | None:
    """Annualized mean/std of daily net log returns; None when std is 0.

    Sample std (ddof=1), risk-free rate zero, sqrt(252) annualization.
    """
    net = ledger.net_log
    if len(net) < 2:
        raise ValidationError("sharpe needs at least 2 daily returns")
    spread = float(net.std(ddof=1))
    if spread == 0.0:
        return None
    return float(net.mean() / spread * math.sqrt(TRADING_DAYS_PER_YEAR))


def hv(closes) -> float:
    """Annualized std of daily log returns of a price path, in percent."""
    closes = np.asarray(closes, dtype=np.float64)
    if closes.ndim != 1 or len(closes) < 3:
        raise ValidationError("hv needs at least 3 closes (2 returns)")
    if not np.isfinite(closes).all() or (closes <= 0).any():
        raise ValidationError("closes must be finite and positive")
    rets = np.diff(np.log(closes))
    return float(rets.std(ddof=1) * math.sqrt(TRADING_DAYS_PER_YEAR) * 100.0)


def write_ledger_csv(path, ledger: TradeLedger) -> None:
    """date, position, gross/cost/net log returns, running cumulative %."""
    running = np.cumsum(ledger.net_log)
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["date", "position", "gross_log", "cost_log", "net_log", "cumulative_pct"]
        )
        for i in range(len(ledger)):
            writer.writerow(
                [
                    ledger.dates[i],
                    ledger.positions[i],
                    repr(float(ledger.gross_log[i])),
                    repr(float(ledger.cost_log[i])),
                    repr(float(ledger.net_log[i])),
                    repr(float((math.exp(float(running[i])) - 1.0) * 100.0)),
                ]
            )
    os.replace(tmp, path)
