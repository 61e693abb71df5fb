"""Command-line front end.

Exit codes are part of the interface: 0 success, 2 missing input files,
3 validation failure, 4 numeric abort. Every failure prints a one-line
message to stderr. Settings come from a TOML or JSON config file; any
--set key=value (and the dedicated flags) override file values.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .backtest import StrategyConfig, simulate, write_ledger_csv
from .dataset import Scaler, fold_split, write_keyword_jsonl
from .errors import MissingInputError, NumericError, ValidationError
from .evaluate import dm_test, persistence_baseline, ridge_baseline, rmse, smape
from .indicators import compute_indicators, load_ohlcv_csv, write_indicator_csv
from .model import predict, save_params
from .pipeline import (
    RunConfig,
    explain_date,
    fold_dir,
    load_checkpoint_extra,
    load_news,
    load_run_config,
    prepare_data,
    read_forecast_csv,
    run_fold,
    run_pipeline,
    train_config_for,
    write_forecast_csv,
)
from .saliency import ToyClassifier, extract_keywords

PROG = "iknet"


def _config_from_args(args) -> RunConfig:
    overrides = {}
    for pair in args.set or []:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ValidationError(f"--set expects key=value, got {pair!r}")
        overrides[key] = value
    for name in ("seed", "out_dir", "jobs", "epochs", "hidden", "variant"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return load_run_config(args.config, overrides)


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="TOML or JSON run config")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override any config field")
    sub.add_argument("--seed", type=int, help="override the run seed")
    sub.add_argument("--out-dir", dest="out_dir", help="override the output directory")
    sub.add_argument("--jobs", type=int, help="cap fold-level worker threads")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--hidden", type=int)
    sub.add_argument("--variant")


def _select_fold(folds, index: int):
    for fold in folds:
        if fold.index == index:
            return fold
    raise ValidationError(
        f"fold {index} is not in the plan (have 1..{len(folds)})"
    )


def cmd_indicators(args) -> int:
    if not os.path.exists(args.ohlcv):
        raise MissingInputError(f"OHLCV CSV not found: {args.ohlcv}")
    frame = compute_indicators(load_ohlcv_csv(args.ohlcv))
    write_indicator_csv(frame, args.out)
    print(f"wrote {int(frame.valid.sum())} indicator rows to {args.out}")
    return 0


def cmd_keywords(args) -> int:
    if not os.path.isdir(args.texts):
        raise MissingInputError(f"texts directory not found: {args.texts}")
    clf = ToyClassifier.from_csv(args.lexicon, dim=args.dim, seed=args.seed)
    days = []
    for entry in sorted(os.listdir(args.texts)):
        if not entry.endswith(".txt"):
            continue
        with open(os.path.join(args.texts, entry), encoding="utf-8") as fh:
            texts = [line.strip() for line in fh if line.strip()]
        if not texts:
            continue
        day = entry[: -len(".txt")]
        days.append((day, len(texts), extract_keywords(texts, clf, n=args.n)))
    if not days:
        raise ValidationError(f"no usable .txt files under {args.texts}")
    write_keyword_jsonl(args.out, days)
    print(f"wrote keywords for {len(days)} days to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _config_from_args(args)
    _, samples, folds = prepare_data(config)
    fold = _select_fold(folds, args.fold)
    result = run_fold(config, samples, fold)
    directory = fold_dir(config.resolved_out_dir(), fold)
    os.makedirs(directory, exist_ok=True)
    checkpoint = os.path.join(directory, "checkpoint.json")
    save_params(
        checkpoint,
        result.params,
        extra={
            "scaler": result.scaler.to_dict(),
            "fold": str(fold),
            "train_years": list(fold.train_years),
            "test_year": fold.test_year,
        },
    )
    write_forecast_csv(os.path.join(directory, "forecasts.csv"), result.forecasts[config.variant])
    row = result.metrics[0]
    print(f"{fold}: rmse {row['rmse']:.6g} smape {row['smape']:.6g}")
    print(f"checkpoint: {checkpoint}")
    return 0


def cmd_eval(args) -> int:
    config = _config_from_args(args)
    _, samples, folds = prepare_data(config)
    fold = _select_fold(folds, args.fold)
    checkpoint = args.checkpoint or os.path.join(
        fold_dir(config.resolved_out_dir(), fold), "checkpoint.json"
    )
    params, extra = load_checkpoint_extra(checkpoint)
    if "scaler" not in extra:
        raise ValidationError("checkpoint carries no scaler; retrain with the pipeline")
    scaler = Scaler.from_dict(extra["scaler"])
    train_s, test_s = fold_split(samples, fold)
    fc = predict(test_s, params, scaler)
    print(f"{fold} {config.variant}: rmse {rmse(fc):.6g} smape {smape(fc):.6g}")
    for label, baseline in (
        ("ridge", ridge_baseline(train_s, test_s, fold=str(fold))),
        ("persistence", persistence_baseline(test_s, fold=str(fold))),
    ):
        res = dm_test(fc, baseline, loss=config.dm_loss)
        print(
            f"  vs {label}: rmse {rmse(baseline):.6g} "
            f"dm {res.statistic:+.4f} p {res.p_value:.4f}"
        )
    return 0


def cmd_backtest(args) -> int:
    config = _config_from_args(args)
    forecasts = args.forecasts
    if forecasts is None:
        if args.fold is None:
            raise ValidationError("backtest needs --forecasts or --fold")
        _, samples, folds = prepare_data(config)
        fold = _select_fold(folds, args.fold)
        forecasts = os.path.join(
            fold_dir(config.resolved_out_dir(), fold), "forecasts.csv"
        )
    fc = read_forecast_csv(forecasts, model=config.variant)
    ledger = simulate(fc, StrategyConfig(cost=config.cost, mode=config.strategy_mode))
    if args.out:
        write_ledger_csv(args.out, ledger)
    summary = ledger.summary()
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def cmd_explain(args) -> int:
    config = _config_from_args(args)
    result = explain_date(config, args.checkpoint, args.date, out_dir=args.out)
    print(f"wrote {result['json']}")
    print(f"wrote {result['html']}")
    print(
        f"prediction {result['prediction']:.6g}, baseline {result['baseline']:.6g}"
    )
    return 0


def cmd_pipeline(args) -> int:
    config = _config_from_args(args)
    manifest = run_pipeline(config)
    out_dir = config.resolved_out_dir()
    print(f"run complete: {out_dir}")
    for model, value in manifest["metrics"]["mean_rmse"].items():
        print(f"  mean rmse {model}: {value:.6g}")
    print(f"  artifacts: {len(manifest['artifacts'])} files (see manifest.json)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG, description="keyword-aware price forecasting toolkit"
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("indicators", help="OHLCV CSV to indicator feature CSV")
    p.add_argument("--ohlcv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_indicators)

    p = subs.add_parser("keywords", help="extract daily keywords from raw texts")
    p.add_argument("--texts", required=True, help="directory of YYYY-MM-DD.txt files")
    p.add_argument("--out", required=True)
    p.add_argument("--lexicon", default=None)
    p.add_argument("--n", type=int, default=17)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_keywords)

    p = subs.add_parser("train", help="train one walk-forward fold")
    _add_config_flags(p)
    p.add_argument("--fold", type=int, required=True)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="score a trained fold against baselines")
    _add_config_flags(p)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("backtest", help="trade a fold's forecasts")
    _add_config_flags(p)
    p.add_argument("--fold", type=int)
    p.add_argument("--forecasts", default=None, help="forecast CSV (default: fold artifact)")
    p.add_argument("--out", default=None, help="ledger CSV path")
    p.set_defaults(func=cmd_backtest)

    p = subs.add_parser("explain", help="attribution report for one predicted day")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--date", required=True, help="target date, YYYY-MM-DD")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_explain)

    p = subs.add_parser("pipeline", help="full walk-forward experiment")
    _add_config_flags(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MissingInputError as exc:
        print(f"{PROG}: missing input: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"{PROG}: missing input: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"{PROG}: invalid: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"{PROG}: numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
