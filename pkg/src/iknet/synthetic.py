"""Deterministic market fixture with a planted, recoverable signal mix.

Daily log returns combine an AR(1) component and a slow pull of the log
price toward its base level (both recoverable from price history alone),
white noise, and a news shock carried by that day's keywords: a handful
of signal words with fixed polarity move the return two trading days
after their news date, which is exactly the horizon a sample's keyword
block is aligned to. Signal polarity lives along one hidden direction of
the embedding space and every other word is orthogonalized against it, so
a model that reads the keywords can recover the shock while price-only
models cannot. The reversion keeps the price range-bound, so every test
year's levels stay inside the span the fold's scaler was fit on; bounded
recurrent activations cannot extrapolate levels they never saw.

Saliency ranks are drawn so decoy words crowd the very top: tiny keyword
budgets mostly select decoys and miss signal words, while oversized
budgets drag in dozens of noise words. That is what produces the interior
optimum in keyword-count sweeps.

Run as a module to materialize a fixture:
    python3 -m iknet.synthetic OUT_DIR --days 600 --seed 0
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from .dataset import write_keyword_jsonl
from .indicators import OhlcvSeries
from .saliency import KeywordSet
from .tensor import rng_stream

SIGNAL_WORDS = {
    "surge": 1.0,
    "rally": 1.0,
    "upgrade": 1.0,
    "beat": 1.0,
    "breakout": 1.0,
    "record": 1.0,
    "plunge": -1.0,
    "slump": -1.0,
    "downgrade": -1.0,
    "miss": -1.0,
    "lawsuit": -1.0,
    "default": -1.0,
}
DECOY_WORDS = (
    "earnings", "guidance", "outlook", "forecast", "dividend",
    "merger", "analyst", "quarterly", "revenue", "margin",
)
NOISE_WORDS = tuple(f"chatter{i:02d}" for i in range(50))
SHOCK_LAG = 2  # news on day j lands in the return of day j + 2


def weekday_calendar(start: date, n_days: int) -> list[str]:
    out = []
    day = start
    while len(out) < n_days:
        if day.weekday() < 5:
            out.append(day.isoformat())
        day += timedelta(days=1)
    return out


def calendar_for_years(first_year: int, last_year: int) -> list[str]:
    out = []
    day = date(first_year, 1, 1)
    end = date(last_year, 12, 31)
    while day <= end:
        if day.weekday() < 5:
            out.append(day.isoformat())
        day += timedelta(days=1)
    return out


@dataclass(frozen=True)
class MarketSpec:
    seed: int = 0
    dim: int = 16
    start_price: float = 1000.0
    rho: float = 0.35
    ar_sigma: float = 0.0035
    noise_sigma: float = 0.003
    reversion: float = 0.02  # pull of log price toward the base level, per day
    shock_scale: float = 0.0025
    signal_beta: float = 0.8
    decoys_per_day: int = 8
    noise_words_per_day: int = 25
    max_signal_words: int = 6


def signal_direction(spec: MarketSpec) -> np.ndarray:
    raw = rng_stream(spec.seed, "signal-direction").normal(size=spec.dim)
    return raw / np.linalg.norm(raw)


def word_embedding(spec: MarketSpec, direction: np.ndarray, word: str) -> np.ndarray:
    raw = rng_stream(spec.seed, "embed", word).normal(0.0, 1.0 / math.sqrt(spec.dim), spec.dim)
    perp = raw - (raw @ direction) * direction
    beta = SIGNAL_WORDS.get(word, 0.0) * spec.signal_beta
    return perp + beta * direction


def _day_news(spec: MarketSpec, direction: np.ndarray, day: str):
    """Word list, saliencies, embeddings, and planted shock for one date."""
    rng = rng_stream(spec.seed, "news", day)
    k_sig = int(rng.integers(2, spec.max_signal_words + 1))
    signal = list(rng.choice(sorted(SIGNAL_WORDS), size=k_sig, replace=False))
    decoys = list(rng.choice(DECOY_WORDS, size=spec.decoys_per_day, replace=False))
    noise = list(rng.choice(NOISE_WORDS, size=spec.noise_words_per_day, replace=False))
    words = signal + decoys + noise
    saliencies = np.concatenate(
        [
            rng.uniform(0.5, 0.9, size=len(signal)),
            rng.uniform(0.6, 1.0, size=len(decoys)),
            rng.uniform(0.05, 0.45, size=len(noise)),
        ]
    )
    order = sorted(range(len(words)), key=lambda i: (-saliencies[i], words[i]))
    words = [words[i] for i in order]
    saliencies = saliencies[order]
    embeddings = np.stack([word_embedding(spec, direction, w) for w in words])
    shock = spec.shock_scale * sum(SIGNAL_WORDS[w] for w in signal)
    articles = int(rng.integers(1, 5))
    return words, saliencies, embeddings, shock, articles


def make_market(dates: list[str], spec: MarketSpec = MarketSpec()):
    """Build the OHLCV series and per-date keyword records.

    Returns (series, keywords_by_date, diagnostics); diagnostics carries the
    exact return decomposition so tests can verify the planted alignment.
    """
    n = len(dates)
    direction = signal_direction(spec)
    keywords = {}
    shock_by_day = np.zeros(n)
    for i, day in enumerate(dates):
        words, saliencies, embeddings, shock, articles = _day_news(spec, direction, day)
        keywords[day] = (
            articles,
            KeywordSet(
                words=words,
                saliencies=saliencies,
                embeddings=embeddings,
                count=len(words),
            ),
        )
        shock_by_day[i] = shock

    eps = rng_stream(spec.seed, "ar").normal(0.0, spec.ar_sigma, n)
    ar = np.zeros(n)
    for t in range(1, n):
        ar[t] = spec.rho * ar[t - 1] + eps[t]
    white = rng_stream(spec.seed, "white").normal(0.0, spec.noise_sigma, n)
    shock_into_return = np.zeros(n)
    shock_into_return[SHOCK_LAG:] = shock_by_day[:-SHOCK_LAG]

    base = math.log(spec.start_price)
    log_price = np.empty(n)
    log_price[0] = base
    returns = np.zeros(n)
    reversion = np.zeros(n)
    for t in range(1, n):
        reversion[t] = spec.reversion * (base - log_price[t - 1])
        returns[t] = reversion[t] + ar[t] + white[t] + shock_into_return[t]
        log_price[t] = log_price[t - 1] + returns[t]
    closes = np.exp(log_price)
    jitter = rng_stream(spec.seed, "ohlcv")
    opens = np.empty(n)
    opens[0] = spec.start_price
    opens[1:] = closes[:-1] * np.exp(jitter.normal(0.0, 0.001, n - 1))
    spread = np.abs(jitter.normal(0.0, 0.002, n))
    highs = np.maximum(opens, closes) * np.exp(spread)
    lows = np.minimum(opens, closes) * np.exp(-np.abs(jitter.normal(0.0, 0.002, n)))
    volumes = 1e6 * np.exp(jitter.normal(0.0, 0.25, n))

    series = OhlcvSeries(
        dates=list(dates),
        open=opens,
        high=highs,
        low=lows,
        close=closes,
        volume=volumes,
    )
    diagnostics = {
        "ar": ar,
        "white": white,
        "reversion": reversion,
        "shock_by_day": shock_by_day,
        "shock_into_return": shock_into_return,
        "returns": returns,
        "direction": direction,
    }
    return series, keywords, diagnostics


def write_fixture(out_dir, dates: list[str], spec: MarketSpec = MarketSpec()) -> dict:
    """Materialize ohlcv.csv and keywords.jsonl; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    series, keywords, _ = make_market(dates, spec)
    ohlcv_path = os.path.join(out_dir, "ohlcv.csv")
    tmp = f"{ohlcv_path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "open", "high", "low", "close", "volume"])
        for i, day in enumerate(series.dates):
            writer.writerow(
                [
                    day,
                    repr(float(series.open[i])),
                    repr(float(series.high[i])),
                    repr(float(series.low[i])),
                    repr(float(series.close[i])),
                    repr(float(series.volume[i])),
                ]
            )
    os.replace(tmp, ohlcv_path)
    jsonl_path = os.path.join(out_dir, "keywords.jsonl")
    write_keyword_jsonl(
        jsonl_path,
        [(day, articles, ks) for day, (articles, ks) in sorted(keywords.items())],
    )
    return {"ohlcv": ohlcv_path, "keywords": jsonl_path}


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="python3 -m iknet.synthetic",
        description="write the synthetic market fixture",
    )
    parser.add_argument("out_dir")
    parser.add_argument("--days", type=int, default=600)
    parser.add_argument("--years", type=str, default=None,
                        help="FIRST:LAST calendar years instead of --days")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--dim", type=int, default=16)
    args = parser.parse_args(argv)
    if args.years:
        first, last = (int(part) for part in args.years.split(":"))
        dates = calendar_for_years(first, last)
    else:
        dates = weekday_calendar(date(2014, 1, 1), args.days)
    spec = MarketSpec(seed=args.seed, dim=args.dim)
    paths = write_fixture(args.out_dir, dates, spec)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
