"""Walk-forward experiment runner and its artifact plumbing.

A run is a pure function of one RunConfig: data ingestion, fold training,
baselines, forecast comparison, backtests, and attribution reports all
draw their randomness from the config seed, so rerunning a config yields
byte-identical artifacts. Folds may train in parallel worker threads, but
every artifact is computed per fold and written from the coordinating
thread in fold order.

The manifest written at the root of the output directory lists every
artifact the run produced and digest-covers the input files, so a reader
can tell exactly which data a result came from.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import get_args, get_origin, get_type_hints

import numpy as np

from .backtest import MODES, StrategyConfig, simulate, write_ledger_csv
from .dataset import (
    FoldSpec,
    Sample,
    Scaler,
    align_news_to_calendar,
    assemble_samples,
    audit_fold,
    build_folds,
    check_coverage,
    fit_scaler,
    fold_split,
    load_keyword_jsonl,
)
from .errors import MissingInputError, ValidationError
from .evaluate import (
    ForecastSeries,
    dm_test,
    persistence_baseline,
    ridge_baseline,
    rmse,
    smape,
)
from .explain import (
    background_from_samples,
    global_importance,
    kernel_shap,
    render_text_attribution,
    standard_grouping,
    write_attribution_report,
    write_importance_csv,
)
from .indicators import FEATURE_NAMES, compute_indicators, load_ohlcv_csv
from .model import GRU_MODES, VARIANTS, TrainConfig, load_params, predict, save_params, train
from .nn import load_checkpoint
from .report import forecast_chart, importance_chart, write_svg
from .saliency import ToyClassifier, extract_keywords

OUTPUT_ROOT_ENV = "IKNET_OUT_ROOT"
DM_LOSSES = ("squared", "absolute")
SHAP_SAMPLERS = ("auto", "exact", "sampled")


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a run, in one flat, strictly validated namespace."""

    ohlcv: str | None = None
    keywords: str | None = None
    texts_dir: str | None = None
    lexicon: str | None = None
    out_dir: str = "run"
    seed: int | None = None
    window: int = 10
    n_keywords: int = 17
    embed_dim: int = 32
    first_train_year: int = 2015
    folds: int = 7
    train_span: int = 3
    hidden: int = 32
    lr: float = 0.01
    epochs: int = 50
    batch_size: int = 32
    dropout: float = 0.1
    lstm_layers: int = 2
    gru_mode: str = "bidirectional"
    variant: str = "full"
    patience: int | None = None
    shap_days: int = 2
    shap_background: int = 25
    shap_coalitions: int = 1024
    shap_sampler: str = "auto"
    cost: float = 0.003
    strategy_mode: str = "standard"
    dm_loss: str = "squared"
    jobs: int = 1

    def __post_init__(self):
        positive = {
            "window": self.window,
            "n_keywords": self.n_keywords,
            "embed_dim": self.embed_dim,
            "folds": self.folds,
            "train_span": self.train_span,
            "hidden": self.hidden,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lstm_layers": self.lstm_layers,
            "shap_background": self.shap_background,
            "shap_coalitions": self.shap_coalitions,
            "jobs": self.jobs,
        }
        for name, v in positive.items():
            if v < 1:
                raise ValidationError(f"{name} must be >= 1, got {v}")
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.cost < 0:
            raise ValidationError(f"cost must be >= 0, got {self.cost}")
        if self.shap_days < 0:
            raise ValidationError(f"shap_days must be >= 0, got {self.shap_days}")
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}")
        if self.gru_mode not in GRU_MODES:
            raise ValidationError(f"gru_mode must be one of {GRU_MODES}")
        if self.strategy_mode not in MODES:
            raise ValidationError(f"strategy_mode must be one of {MODES}")
        if self.dm_loss not in DM_LOSSES:
            raise ValidationError(f"dm_loss must be one of {DM_LOSSES}")
        if self.shap_sampler not in SHAP_SAMPLERS:
            raise ValidationError(f"shap_sampler must be one of {SHAP_SAMPLERS}")
        if self.patience is not None and self.patience < 1:
            raise ValidationError(f"patience must be >= 1, got {self.patience}")

    def to_dict(self) -> dict:
        return asdict(self)

    def resolved_out_dir(self) -> str:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not os.path.isabs(self.out_dir):
            return os.path.join(root, self.out_dir)
        return self.out_dir


_FIELD_TYPES = get_type_hints(RunConfig)


def _coerce(name: str, value):
    """File/flag value to the field's declared type, or ValidationError."""
    want = _FIELD_TYPES[name]
    optional = get_origin(want) is not None and type(None) in get_args(want)
    if optional:
        if value is None or value == "none":
            return None
        want = next(a for a in get_args(want) if a is not type(None))
    if want is str:
        if not isinstance(value, str):
            raise ValidationError(f"{name} must be a string, got {value!r}")
        return value
    if want is int:
        if isinstance(value, bool) or (
            not isinstance(value, int) and not _is_int_string(value)
        ):
            raise ValidationError(f"{name} must be an integer, got {value!r}")
        return int(value)
    if want is float:
        if isinstance(value, bool) or isinstance(value, str):
            if not _is_float_string(value):
                raise ValidationError(f"{name} must be a number, got {value!r}")
            return float(value)
        if not isinstance(value, (int, float)):
            raise ValidationError(f"{name} must be a number, got {value!r}")
        return float(value)
    raise ValidationError(f"unsupported config field type for {name}")


def _is_int_string(value) -> bool:
    if not isinstance(value, str):
        return False
    try:
        int(value)
        return True
    except ValueError:
        return False


def _is_float_string(value) -> bool:
    if not isinstance(value, str):
        return False
    try:
        float(value)
        return True
    except ValueError:
        return False


def parse_config_mapping(data: dict, source: str) -> dict:
    if not isinstance(data, dict):
        raise ValidationError(f"{source}: config must be a flat table of settings")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"{source}: unknown config key(s): {', '.join(unknown)}")
    return {name: _coerce(name, value) for name, value in data.items()}


def load_run_config(path: str | os.PathLike, overrides: dict | None = None) -> RunConfig:
    """TOML or JSON file of flat settings; overrides win over file values."""
    if not os.path.exists(path):
        raise MissingInputError(f"config file not found: {path}")
    raw = open(path, "rb").read()
    suffix = os.path.splitext(str(path))[1].lower()
    data = None
    parse_errors = []
    attempts = ["toml", "json"] if suffix != ".json" else ["json", "toml"]
    for kind in attempts:
        try:
            if kind == "toml":
                data = _load_toml(raw)
            else:
                data = json.loads(raw.decode("utf-8"))
            break
        except ValueError as exc:
            parse_errors.append(f"{kind}: {exc}")
    if data is None:
        raise ValidationError(f"{path}: unparseable config ({'; '.join(parse_errors)})")
    settings = parse_config_mapping(data, str(path))
    if overrides:
        settings.update(parse_config_mapping(overrides, "command line"))
    return RunConfig(**settings)


def _load_toml(raw: bytes) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ValueError(str(exc)) from exc


# ---------------------------------------------------------------------------
# data preparation


def _require_file(path: str | None, what: str) -> str:
    if not path:
        raise ValidationError(f"config is missing the {what} path")
    if not os.path.exists(path):
        raise MissingInputError(f"{what} not found: {path}")
    return path


def load_news(config: RunConfig) -> dict[str, tuple[int, "object"]]:
    """Keyword records from the JSONL file or extracted from raw texts."""
    if config.keywords and config.texts_dir:
        raise ValidationError("config sets both keywords and texts_dir; pick one")
    if config.keywords:
        return load_keyword_jsonl(_require_file(config.keywords, "keywords JSONL"))
    if config.texts_dir:
        directory = _require_file(config.texts_dir, "texts directory")
        if not os.path.isdir(directory):
            raise ValidationError(f"texts_dir is not a directory: {directory}")
        clf = ToyClassifier.from_csv(
            config.lexicon, dim=config.embed_dim, seed=config.seed or 0
        )
        news = {}
        for entry in sorted(os.listdir(directory)):
            if not entry.endswith(".txt"):
                continue
            day = entry[: -len(".txt")]
            with open(os.path.join(directory, entry), encoding="utf-8") as fh:
                texts = [line.strip() for line in fh if line.strip()]
            if not texts:
                continue
            news[day] = (len(texts), extract_keywords(texts, clf, n=config.n_keywords))
        if not news:
            raise ValidationError(f"no usable .txt files under {directory}")
        return news
    raise ValidationError("config needs either a keywords JSONL or a texts_dir")


def prepare_data(config: RunConfig):
    """Ingest inputs into samples plus the fold plan."""
    series = load_ohlcv_csv(_require_file(config.ohlcv, "OHLCV CSV"))
    frame = compute_indicators(series)
    news = load_news(config)
    aligned = align_news_to_calendar(news, frame.dates)
    dim = None
    for ks in aligned.values():
        dim = ks.dim
        break
    samples = assemble_samples(
        frame, aligned, T=config.window, n_keywords=config.n_keywords, dim=dim
    )
    folds = build_folds(config.first_train_year, config.folds, config.train_span)
    check_coverage(folds, samples)
    return frame, samples, folds


# ---------------------------------------------------------------------------
# per-fold work


@dataclass
class FoldResult:
    fold: FoldSpec
    scaler: Scaler
    params: object
    forecasts: dict[str, ForecastSeries]
    metrics: list[dict]
    dm_rows: list[dict]
    ledger: object
    backtest_summary: dict
    attributions: list
    attribution_payloads: list[tuple[str, dict, str]]
    audit: dict


def train_config_for(config: RunConfig) -> TrainConfig:
    if config.seed is None:
        raise ValidationError("seed is required; set it in the config or pass --seed")
    return TrainConfig(
        seed=config.seed,
        lr=config.lr,
        batch_size=config.batch_size,
        epochs=config.epochs,
        dropout=config.dropout,
        hidden=config.hidden,
        n_keywords=config.n_keywords,
        window=config.window,
        lstm_layers=config.lstm_layers,
        gru_mode=config.gru_mode,
        variant=config.variant,
        patience=config.patience,
    )


def _metric_row(fold: FoldSpec, model: str, fc: ForecastSeries) -> dict:
    return {
        "fold": str(fold),
        "test_year": fold.test_year,
        "model": model,
        "n_test": len(fc),
        "rmse": rmse(fc),
        "smape": smape(fc),
    }


def _shap_indices(n_test: int, shap_days: int) -> list[int]:
    if shap_days == 0 or n_test == 0:
        return []
    picks = np.linspace(0, n_test - 1, min(shap_days, n_test))
    return sorted({int(round(p)) for p in picks})


def run_fold(config: RunConfig, samples: list[Sample], fold: FoldSpec) -> FoldResult:
    train_s, test_s = fold_split(samples, fold)
    if not train_s or not test_s:
        raise ValidationError(f"{fold} has an empty split; check data coverage")
    audit = audit_fold(train_s, test_s, fold)
    scaler = fit_scaler(train_s)
    params, _ = train(train_s, train_config_for(config), scaler)
    name = config.variant
    forecasts = {
        name: predict(test_s, params, scaler),
        "ridge": ridge_baseline(train_s, test_s, fold=str(fold)),
        "persistence": persistence_baseline(test_s, fold=str(fold)),
    }
    metrics = [_metric_row(fold, m, fc) for m, fc in forecasts.items()]
    dm_rows = []
    for a, b in ((name, "ridge"), (name, "persistence"), ("ridge", "persistence")):
        res = dm_test(forecasts[a], forecasts[b], loss=config.dm_loss)
        dm_rows.append(
            {
                "fold": str(fold),
                "model_a": a,
                "model_b": b,
                "statistic": res.statistic,
                "p_value": res.p_value,
            }
        )
    ledger = simulate(
        forecasts[name], StrategyConfig(cost=config.cost, mode=config.strategy_mode)
    )
    summary = ledger.summary()

    attributions = []
    payloads = []
    if _shap_indices(len(test_s), config.shap_days):
        background = background_from_samples(
            train_s, size=config.shap_background, seed=config.seed
        )
        dim = samples[0].keywords.embeddings.shape[1]
        grouping = standard_grouping(
            config.n_keywords, dim, config.window, FEATURE_NAMES
        )
        for i in _shap_indices(len(test_s), config.shap_days):
            attribution = kernel_shap(
                test_s[i],
                params,
                scaler,
                grouping,
                background,
                n_coalitions=config.shap_coalitions,
                seed=config.seed,
                sampler=config.shap_sampler,
            )
            payload, html = render_text_attribution("", test_s[i].keywords, attribution)
            attributions.append(attribution)
            payloads.append((test_s[i].target_date, payload, html))
    return FoldResult(
        fold=fold,
        scaler=scaler,
        params=params,
        forecasts=forecasts,
        metrics=metrics,
        dm_rows=dm_rows,
        ledger=ledger,
        backtest_summary=summary,
        attributions=attributions,
        attribution_payloads=payloads,
        audit=audit,
    )


# ---------------------------------------------------------------------------
# artifact writers


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(header: list[str], rows: list[list]) -> str:
    lines = [",".join(header)]
    for row in rows:
        cells = [repr(float(v)) if isinstance(v, float) else str(v) for v in row]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_forecast_csv(path: str | os.PathLike, fc: ForecastSeries) -> None:
    rows = [
        [fc.dates[i], float(fc.y_hat[i]), float(fc.y_true[i]), float(fc.anchor_close[i])]
        for i in range(len(fc))
    ]
    _atomic_write(str(path), _csv_text(["date", "y_hat", "y_true", "anchor_close"], rows))


def read_forecast_csv(path: str | os.PathLike, model: str = "", fold: str = "") -> ForecastSeries:
    if not os.path.exists(path):
        raise MissingInputError(f"forecast CSV not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"date", "y_hat", "y_true", "anchor_close"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValidationError(f"{path}: expected columns {sorted(need)}")
        rows = list(reader)
    if not rows:
        raise ValidationError(f"{path}: no forecast rows")
    try:
        return ForecastSeries(
            dates=[r["date"] for r in rows],
            y_hat=np.array([float(r["y_hat"]) for r in rows]),
            y_true=np.array([float(r["y_true"]) for r in rows]),
            anchor_close=np.array([float(r["anchor_close"]) for r in rows]),
            model=model,
            fold=fold,
        )
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def fold_dir(out_dir: str, fold: FoldSpec) -> str:
    return os.path.join(out_dir, "folds", f"fold{fold.index}")


def _write_fold_artifacts(config: RunConfig, out_dir: str, result: FoldResult) -> list[str]:
    directory = fold_dir(out_dir, result.fold)
    os.makedirs(directory, exist_ok=True)
    written = []

    checkpoint = os.path.join(directory, "checkpoint.json")
    save_params(
        checkpoint,
        result.params,
        extra={
            "scaler": result.scaler.to_dict(),
            "fold": str(result.fold),
            "train_years": list(result.fold.train_years),
            "test_year": result.fold.test_year,
        },
    )
    written.append(checkpoint)

    forecasts = os.path.join(directory, "forecasts.csv")
    write_forecast_csv(forecasts, result.forecasts[config.variant])
    written.append(forecasts)

    ledger_path = os.path.join(directory, "ledger.csv")
    write_ledger_csv(ledger_path, result.ledger)
    written.append(ledger_path)

    backtest_path = os.path.join(directory, "backtest.json")
    _atomic_write(
        backtest_path,
        json.dumps(result.backtest_summary, sort_keys=True, indent=2) + "\n",
    )
    written.append(backtest_path)

    for date, payload, html in result.attribution_payloads:
        report_dir = os.path.join(directory, "attributions")
        write_attribution_report(report_dir, date, payload, html)
        written.append(os.path.join(report_dir, f"{date}.json"))
        written.append(os.path.join(report_dir, f"{date}.html"))
    return written


def _write_plots(config: RunConfig, out_dir: str, results: list[FoldResult]) -> list[str]:
    plot_dir = os.path.join(out_dir, "plots")
    os.makedirs(plot_dir, exist_ok=True)
    written = []
    for result in results:
        fc = result.forecasts[config.variant]
        title = f"{config.variant} vs actual, {result.fold.test_year}"
        path = os.path.join(
            plot_dir, f"forecast_fold{result.fold.index}_{result.fold.test_year}.svg"
        )
        write_svg(path, forecast_chart(fc, title))
        written.append(path)
    return written


def run_pipeline(config: RunConfig) -> dict:
    """The full walk-forward experiment; returns the manifest."""
    if config.seed is None:
        raise ValidationError("seed is required; set it in the config or pass --seed")
    out_dir = config.resolved_out_dir()
    os.makedirs(out_dir, exist_ok=True)
    inputs = {"ohlcv": _require_file(config.ohlcv, "OHLCV CSV")}
    if config.keywords:
        inputs["keywords"] = _require_file(config.keywords, "keywords JSONL")
    if config.texts_dir:
        inputs["texts_dir"] = _require_file(config.texts_dir, "texts directory")
    if config.lexicon:
        inputs["lexicon"] = _require_file(config.lexicon, "lexicon CSV")

    frame, samples, folds = prepare_data(config)
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(lambda f: run_fold(config, samples, f), folds))
    else:
        results = [run_fold(config, samples, fold) for fold in folds]

    written: list[str] = []
    for result in results:
        written.extend(_write_fold_artifacts(config, out_dir, result))

    metric_rows = [row for result in results for row in result.metrics]
    by_model: dict[str, list[float]] = {}
    for row in metric_rows:
        by_model.setdefault(row["model"], []).append(row["rmse"])
    mean_rows = [
        {
            "fold": "mean",
            "test_year": "",
            "model": model,
            "n_test": "",
            "rmse": float(np.mean(values)),
            "smape": "",
        }
        for model, values in sorted(by_model.items())
    ]
    metrics_path = os.path.join(out_dir, "metrics.csv")
    header = ["fold", "test_year", "model", "n_test", "rmse", "smape"]
    _atomic_write(
        metrics_path,
        _csv_text(header, [[r[k] for k in header] for r in metric_rows + mean_rows]),
    )
    written.append(metrics_path)

    dm_path = os.path.join(out_dir, "dm_matrix.csv")
    dm_header = ["fold", "model_a", "model_b", "statistic", "p_value"]
    dm_rows = [row for result in results for row in result.dm_rows]
    _atomic_write(
        dm_path, _csv_text(dm_header, [[r[k] for k in dm_header] for r in dm_rows])
    )
    written.append(dm_path)

    all_attributions = [a for result in results for a in result.attributions]
    if all_attributions:
        ranked = global_importance(all_attributions)
        importance_path = os.path.join(out_dir, "importance.csv")
        write_importance_csv(importance_path, ranked)
        written.append(importance_path)
        chart_path = os.path.join(out_dir, "plots", "importance.svg")
        os.makedirs(os.path.dirname(chart_path), exist_ok=True)
        write_svg(chart_path, importance_chart(ranked, "mean |phi| by feature group"))
        written.append(chart_path)

    written.extend(_write_plots(config, out_dir, results))

    manifest = {
        "config": config.to_dict(),
        "inputs": {
            name: {"path": path, "sha256": file_digest(path)}
            for name, path in sorted(inputs.items())
        },
        "folds": [
            {
                "fold": str(result.fold),
                "index": result.fold.index,
                "train_years": list(result.fold.train_years),
                "test_year": result.fold.test_year,
                "n_train": len(result.audit["train"]["target_dates"]),
                "n_test": len(result.audit["test"]["target_dates"]),
                "backtest": result.backtest_summary,
            }
            for result in results
        ],
        "metrics": {
            "mean_rmse": {m: float(np.mean(v)) for m, v in sorted(by_model.items())},
        },
        "artifacts": {
            os.path.relpath(path, out_dir): file_digest(path) for path in sorted(written)
        },
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    _atomic_write(manifest_path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# one-day explanation


def load_checkpoint_extra(path: str | os.PathLike) -> tuple:
    """Params plus the run context save_params tucked beside them."""
    if not os.path.exists(path):
        raise MissingInputError(f"checkpoint not found: {path}")
    _, config = load_checkpoint(path)
    extra = config.get("extra", {})
    params = load_params(path)
    return params, extra


def explain_date(
    config: RunConfig, checkpoint_path: str | os.PathLike, date: str, out_dir: str | None = None
) -> dict:
    """Attribution artifacts for one predicted day of the checkpoint's fold."""
    if config.seed is None:
        raise ValidationError("seed is required; set it in the config or pass --seed")
    params, extra = load_checkpoint_extra(checkpoint_path)
    if "scaler" not in extra or "test_year" not in extra:
        raise ValidationError(
            "checkpoint carries no fold context; retrain with the pipeline"
        )
    scaler = Scaler.from_dict(extra["scaler"])
    _, samples, _ = prepare_data(config)
    fold = FoldSpec(
        index=0, train_years=tuple(extra["train_years"]), test_year=extra["test_year"]
    )
    train_s, test_s = fold_split(samples, fold)
    by_date = {s.target_date: s for s in test_s}
    if date not in by_date:
        span = f"{test_s[0].target_date}..{test_s[-1].target_date}" if test_s else "empty"
        raise MissingInputError(
            f"{date} is not a predicted trading day of this checkpoint "
            f"(test range {span})"
        )
    sample = by_date[date]
    background = background_from_samples(
        train_s, size=config.shap_background, seed=config.seed
    )
    dim = sample.keywords.embeddings.shape[1]
    grouping = standard_grouping(config.n_keywords, dim, config.window, FEATURE_NAMES)
    attribution = kernel_shap(
        sample,
        params,
        scaler,
        grouping,
        background,
        n_coalitions=config.shap_coalitions,
        seed=config.seed,
        sampler=config.shap_sampler,
    )
    payload, html = render_text_attribution("", sample.keywords, attribution)
    directory = out_dir or os.path.join(config.resolved_out_dir(), "explain")
    write_attribution_report(directory, date, payload, html)
    return {
        "date": date,
        "json": os.path.join(directory, f"{date}.json"),
        "html": os.path.join(directory, f"{date}.html"),
        "prediction": attribution.prediction,
        "baseline": attribution.baseline,
    }
