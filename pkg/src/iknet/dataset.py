"""Sample assembly, walk-forward folds, scaling, and the keyword JSONL format.

Alignment convention, fixed across the engine: a sample anchored at trading
day a uses the T rows strictly before a as its feature window, the close of
day a+1 as its target, and the keyword set extracted from news of day a-1.
The anchor's own close rides along for the persistence baseline and the
backtest. News dated on non-trading days rolls forward to the next trading
day; same-word collisions keep the higher saliency and article counts add.
"""

from __future__ import annotations

import json
import os
from bisect import bisect_left
from dataclasses import dataclass
from datetime import date as _date

import numpy as np

from .errors import MissingInputError, ValidationError
from .indicators import FEATURE_NAMES, IndicatorFrame
from .saliency import KeywordSet


@dataclass
class Sample:
    anchor_date: str
    target_date: str
    news_date: str
    window_dates: list[str]
    x_tech: np.ndarray  # (T, f) raw, scaled per fold later
    keywords: KeywordSet
    y: float  # raw next-day close
    anchor_close: float

    def __post_init__(self):
        if self.x_tech.ndim != 2 or self.x_tech.shape[0] != len(self.window_dates):
            raise ValidationError("window shape does not match window dates")
        if not np.isfinite(self.x_tech).all():
            raise ValidationError(f"non-finite features in window at {self.anchor_date}")

    @property
    def target_year(self) -> int:
        return int(self.target_date[:4])


@dataclass(frozen=True)
class FoldSpec:
    index: int
    train_years: tuple[int, ...]
    test_year: int

    def __str__(self) -> str:
        return f"fold{self.index}:train{self.train_years[0]}-{self.train_years[-1]}/test{self.test_year}"


def build_folds(first_train_year: int, n_folds: int = 7, train_span: int = 3) -> list[FoldSpec]:
    """Rolling splits: span training years, then the next year as test."""
    if n_folds < 1 or train_span < 1:
        raise ValidationError("n_folds and train_span must be >= 1")
    folds = []
    for i in range(n_folds):
        start = first_train_year + i
        folds.append(
            FoldSpec(
                index=i + 1,
                train_years=tuple(range(start, start + train_span)),
                test_year=start + train_span,
            )
        )
    return folds


def check_coverage(folds: list[FoldSpec], samples: list["Sample"]) -> None:
    """Every fold year must have at least one sample targeting it."""
    have = {s.target_year for s in samples}
    need = sorted({y for f in folds for y in (*f.train_years, f.test_year)})
    missing = [y for y in need if y not in have]
    if missing:
        raise ValidationError(f"no samples target year(s) {missing}; folds need {need}")


def fit_width(ks: KeywordSet, n: int) -> KeywordSet:
    """Truncate or zero-pad a keyword set to exactly n slots."""
    if ks.n == n:
        return ks
    real = min(ks.count, n)
    words = list(ks.words[:real]) + [""] * (n - real)
    saliencies = np.zeros(n)
    saliencies[:real] = ks.saliencies[:real]
    embeddings = np.zeros((n, ks.dim))
    embeddings[:real] = ks.embeddings[:real]
    return KeywordSet(words=words, saliencies=saliencies, embeddings=embeddings, count=real)


def assemble_samples(
    frame: IndicatorFrame,
    keywords_by_date: dict[str, KeywordSet],
    T: int = 10,
    n_keywords: int = 17,
    dim: int | None = None,
) -> list[Sample]:
    """One sample per anchor with a full T-day valid history and a next day."""
    if T < 1:
        raise ValidationError(f"window length must be >= 1, got {T}")
    if dim is None:
        for ks in keywords_by_date.values():
            dim = ks.dim
            break
        else:
            raise ValidationError("no keyword data; pass dim for zero-padding")
    valid_idx = np.flatnonzero(frame.valid)
    if valid_idx.size and not frame.valid[valid_idx[0] :].all():
        raise ValidationError("validity mask must be a suffix of the frame")

    close = frame.column("close")
    zero_ks = KeywordSet.zero(n_keywords, dim)
    samples: list[Sample] = []
    if valid_idx.size == 0:
        return samples
    start = valid_idx[0] + T
    for a in range(start, len(frame) - 1):
        news_date = frame.dates[a - 1]
        ks = keywords_by_date.get(news_date)
        ks = zero_ks if ks is None else fit_width(ks, n_keywords)
        if ks.dim != dim:
            raise ValidationError(
                f"keyword dim {ks.dim} at {news_date} != file dim {dim}"
            )
        samples.append(
            Sample(
                anchor_date=frame.dates[a],
                target_date=frame.dates[a + 1],
                news_date=news_date,
                window_dates=list(frame.dates[a - T : a]),
                x_tech=frame.features[a - T : a].copy(),
                keywords=ks,
                y=float(close[a + 1]),
                anchor_close=float(close[a]),
            )
        )
    return samples


def fold_split(samples: list[Sample], fold: FoldSpec) -> tuple[list[Sample], list[Sample]]:
    """Membership by the year of the target date."""
    train = [s for s in samples if s.target_year in fold.train_years]
    test = [s for s in samples if s.target_year == fold.test_year]
    return train, test


def accessed_dates(samples: list[Sample]) -> dict[str, list[str]]:
    """Every date a split reads, grouped by role; the leakage audit input."""
    windows, news, anchors, targets = set(), set(), set(), set()
    for s in samples:
        windows.update(s.window_dates)
        news.add(s.news_date)
        anchors.add(s.anchor_date)
        targets.add(s.target_date)
    return {
        "window_dates": sorted(windows),
        "news_dates": sorted(news),
        "anchor_dates": sorted(anchors),
        "target_dates": sorted(targets),
    }


def audit_fold(train: list[Sample], test: list[Sample], fold: FoldSpec) -> dict:
    """Raise if any training input could peek past the training period."""
    train_log = accessed_dates(train)
    test_log = accessed_dates(test)
    train_max = max(max(v) for v in train_log.values() if v)
    train_end = f"{fold.train_years[-1]}-12-31"
    if train_max > train_end:
        raise ValidationError(f"training split reads {train_max} after {train_end}")
    if test:
        test_min_target = min(test_log["target_dates"])
        if train_max >= test_min_target:
            raise ValidationError(
                f"training split reads {train_max}, not before first test target {test_min_target}"
            )
    return {"fold": str(fold), "train": train_log, "test": test_log}


# ---------------------------------------------------------------------------
# scaling


@dataclass
class Scaler:
    mean: np.ndarray  # (f,)
    scale: np.ndarray  # (f,)
    target_mean: float
    target_scale: float
    degenerate: list[str]

    def apply_window(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale

    def invert_window(self, x: np.ndarray) -> np.ndarray:
        return x * self.scale + self.mean

    def apply_target(self, y):
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_scale

    def invert_target(self, y):
        return np.asarray(y, dtype=np.float64) * self.target_scale + self.target_mean

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "target_mean": self.target_mean,
            "target_scale": self.target_scale,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(
            mean=np.array(d["mean"], dtype=np.float64),
            scale=np.array(d["scale"], dtype=np.float64),
            target_mean=float(d["target_mean"]),
            target_scale=float(d["target_scale"]),
            degenerate=list(d["degenerate"]),
        )


def fit_scaler(train_samples: list[Sample]) -> Scaler:
    """Z-score statistics over all training window rows and targets.

    Population std; a flat column gets scale 1 and lands in `degenerate` so
    reports can flag it. Keyword embeddings are left untouched by design.
    """
    if not train_samples:
        raise ValidationError("cannot fit a scaler on an empty training split")
    rows = np.concatenate([s.x_tech for s in train_samples], axis=0)
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    degenerate = [FEATURE_NAMES[i] for i in np.flatnonzero(std == 0.0)]
    scale = np.where(std == 0.0, 1.0, std)
    targets = np.array([s.y for s in train_samples])
    t_std = targets.std()
    if t_std == 0.0:
        degenerate.append("target")
        t_std = 1.0
    return Scaler(
        mean=mean,
        scale=scale,
        target_mean=float(targets.mean()),
        target_scale=float(t_std),
        degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# keyword JSONL


def write_keyword_jsonl(
    path: str | os.PathLike,
    days: list[tuple[str, int, KeywordSet]],
) -> None:
    """One line per date: real entries only, sorted by date."""
    with open(path, "w", encoding="utf-8") as fh:
        for date, articles, ks in sorted(days, key=lambda d: d[0]):
            obj = {
                "date": date,
                "articles": articles,
                "keywords": [
                    {
                        "word": ks.words[i],
                        "saliency": float(ks.saliencies[i]),
                        "embedding": [float(v) for v in ks.embeddings[i]],
                    }
                    for i in range(ks.count)
                ],
            }
            fh.write(json.dumps(obj, allow_nan=False, separators=(",", ":")) + "\n")


def load_keyword_jsonl(path: str | os.PathLike) -> dict[str, tuple[int, KeywordSet]]:
    """date -> (articles, keyword set); validates one dim across the file."""
    if not os.path.exists(path):
        raise MissingInputError(f"keyword file not found: {path}")
    out: dict[str, tuple[int, KeywordSet]] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            try:
                date = obj["date"]
                articles = int(obj["articles"])
                entries = obj["keywords"]
            except (KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: missing field {exc}") from exc
            _date.fromisoformat(date)
            if date in out:
                raise ValidationError(f"{path}:{lineno}: duplicate date {date}")
            for e in entries:
                d = len(e["embedding"])
                if dim is None:
                    dim = d
                elif d != dim:
                    raise ValidationError(
                        f"{path}:{lineno}: embedding dim {d} != {dim} seen earlier"
                    )
            n = len(entries)
            if n == 0:
                if dim is None:
                    raise ValidationError(
                        f"{path}:{lineno}: empty first record leaves dim unknown"
                    )
                out[date] = (articles, KeywordSet.zero(0, dim))
                continue
            order = sorted(
                range(n), key=lambda i: (-float(entries[i]["saliency"]), entries[i]["word"])
            )
            ks = KeywordSet(
                words=[entries[i]["word"] for i in order],
                saliencies=np.array([float(entries[i]["saliency"]) for i in order]),
                embeddings=np.array(
                    [[float(v) for v in entries[i]["embedding"]] for i in order]
                ),
                count=n,
            )
            out[date] = (articles, ks)
    if not out:
        raise ValidationError(f"no records in {path}")
    return out


def align_news_to_calendar(
    news: dict[str, tuple[int, KeywordSet]], trading_dates: list[str]
) -> dict[str, KeywordSet]:
    """Roll non-trading-day news forward; merge collisions word-wise by max."""
    merged: dict[str, dict[str, tuple[float, np.ndarray]]] = {}
    counts: dict[str, int] = {}
    for date in sorted(news):
        articles, ks = news[date]
        i = bisect_left(trading_dates, date)
        if i == len(trading_dates):
            continue  # news after the last trading day has no day to move
        target = trading_dates[i]
        counts[target] = counts.get(target, 0) + articles
        bucket = merged.setdefault(target, {})
        for j in range(ks.count):
            word = ks.words[j]
            s = float(ks.saliencies[j])
            if word not in bucket or s > bucket[word][0]:
                bucket[word] = (s, ks.embeddings[j])
    out: dict[str, KeywordSet] = {}
    for date, bucket in merged.items():
        if not bucket:
            dims = [ks.dim for _, ks in news.values()]
            out[date] = KeywordSet.zero(0, dims[0])
            continue
        ranked = sorted(bucket.items(), key=lambda kv: (-kv[1][0], kv[0]))
        out[date] = KeywordSet(
            words=[w for w, _ in ranked],
            saliencies=np.array([v[0] for _, v in ranked]),
            embeddings=np.stack([v[1] for _, v in ranked]),
            count=len(ranked),
        )
    return out
