"""Command-line front end.

Subcommands:
  synth     write a synthetic price CSV
  train     train a model from a CSV and save the checkpoint
  predict   one interval for one test day from a checkpoint
  evaluate  full sigma-sweep experiment from a TOML config
  report    text fallacy report from a run's emitted metric files

Exit codes: 0 success, 1 usage/validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .data import (
    PriceSeries,
    SynthConfig,
    fit_normalize,
    load_csv,
    make_windows,
    synth_prices,
    write_csv,
)
from .gan import GanHyper, load_checkpoint, save_checkpoint, train
from .harness import ExperimentConfig, derive_seed, run_experiment
from .intervals import predict_day
from .metrics import DEFAULT_LOW_ECP_THRESHOLD, fallacy_report_from_stats


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="scenario-bands",
                     description="Scenario-based interval prediction toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic price CSV")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--days", type=int, default=65)
    p.add_argument("--points-per-day", type=int, default=48)
    p.add_argument("--seed", type=int, default=12345)

    p = sub.add_parser("train", help="train a model from a CSV")
    p.add_argument("--data", required=True, help="input price CSV")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--points-per-day", type=int, default=48)
    p.add_argument("--test-days", type=int, default=5,
                   help="days excluded from training and normalization")
    p.add_argument("--iterations", type=int, default=GanHyper.iterations)
    p.add_argument("--seed", type=int, default=2024)

    p = sub.add_parser("predict", help="one interval from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="price CSV the condition is taken from")
    p.add_argument("--points-per-day", type=int, default=48)
    p.add_argument("--test-days", type=int, default=5)
    p.add_argument("--day", type=int, default=0, help="test-day index to predict")
    p.add_argument("--sigma", type=float, required=True, help="noise scale (> 0)")
    p.add_argument("--scenarios", type=int, default=100)
    p.add_argument("--method", default="envelope",
                   help='"envelope" or "quantile:<alpha>"')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-", help="output JSON path, - for stdout")

    p = sub.add_parser("evaluate", help="full sigma-sweep experiment")
    p.add_argument("--config", required=True, help="TOML experiment config")
    p.add_argument("--output-dir", default=None, help="override the config's output_dir")

    p = sub.add_parser("report", help="text fallacy report from run files")
    p.add_argument("--run-dir", required=True, help="directory written by evaluate")
    p.add_argument("--sigma-index", type=int, default=None,
                   help="grid index to report on (default: sigma closest to 1)")
    p.add_argument("--low-ecp", type=float, default=DEFAULT_LOW_ECP_THRESHOLD,
                   help="flag points with ECP below this")
    return parser


def _cmd_synth(args) -> int:
    config = SynthConfig(days=args.days, points_per_day=args.points_per_day, seed=args.seed)
    series = synth_prices(config)
    write_csv(series, args.out)
    print(f"wrote {series.n_days} days x {series.points_per_day} points to {args.out}")
    return 0


def _cmd_train(args) -> int:
    series = load_csv(args.data, points_per_day=args.points_per_day)
    normalized, scaler = fit_normalize(series, fit_days=series.n_days - args.test_days)
    train_set, _ = make_windows(normalized, args.test_days)
    hyper = GanHyper(iterations=args.iterations)
    checkpoint, trace = train(train_set, hyper, derive_seed(args.seed, ("train",)), scaler=scaler)
    save_checkpoint(checkpoint, args.out)
    final = trace.critic_loss[-1] if trace.critic_loss.size else float("nan")
    print(f"trained {args.iterations} iterations (final critic loss {final:.4f}); "
          f"checkpoint at {args.out}")
    return 0


def _cmd_predict(args) -> int:
    if not args.sigma > 0:
        print("error: --sigma must be > 0", file=sys.stderr)
        return 1
    if args.scenarios < 2:
        print("error: --scenarios must be >= 2", file=sys.stderr)
        return 1
    checkpoint = load_checkpoint(args.checkpoint)
    lo, hi = checkpoint.train_sigma_range
    if not lo <= args.sigma <= hi:
        print(f"error: --sigma {args.sigma:g} is outside the checkpoint's trained "
              f"noise range [{lo:g}, {hi:g}]; refusing to extrapolate", file=sys.stderr)
        return 1
    series = load_csv(args.data, points_per_day=args.points_per_day)
    normalized = PriceSeries(values=checkpoint.scaler.transform(series.values),
                             points_per_day=series.points_per_day)
    _, test_set = make_windows(normalized, args.test_days)
    if not 0 <= args.day < test_set.n_samples:
        print(f"error: --day must lie in [0, {test_set.n_samples - 1}]", file=sys.stderr)
        return 1
    band, _ = predict_day(checkpoint, test_set.conditions[args.day], args.sigma,
                          n_scenarios=args.scenarios, seed=args.seed,
                          method=args.method, condition_id=args.day)
    doc = {
        "sigma": args.sigma,
        "day": args.day,
        "method": args.method,
        "lower": band.lower.tolist(),
        "upper": band.upper.tolist(),
        "truth": test_set.targets[args.day].tolist(),
    }
    text = json.dumps(doc, indent=2) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")
    return 0


def _cmd_evaluate(args) -> int:
    config = ExperimentConfig.from_toml(args.config)
    if args.output_dir is not None:
        config.output_dir = args.output_dir
    manifest = run_experiment(config)
    print(f"run complete: {len(manifest.checksums)} files in {config.output_dir} "
          f"({manifest.timings['total_seconds']:.1f}s)")
    return 0


def _read_metric_columns(path: Path, columns):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    return {c: [row[c] for row in rows] for c in columns}


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    fig8 = run_dir / "fig8.csv"
    if not fig8.exists():
        print(f"error: {fig8} not found (not an evaluate output directory?)", file=sys.stderr)
        return 1
    fig8_cols = _read_metric_columns(fig8, ("sigma", "repeat", "ecpas"))
    sigmas = sorted({float(s) for s in fig8_cols["sigma"]})
    if args.sigma_index is None:
        index = min(range(len(sigmas)), key=lambda k: abs(sigmas[k] - 1.0))
    elif 0 <= args.sigma_index < len(sigmas):
        index = args.sigma_index
    else:
        print(f"error: --sigma-index must lie in [0, {len(sigmas) - 1}]", file=sys.stderr)
        return 1
    sigma = sigmas[index]
    ecpas = [float(e) for s, e in zip(fig8_cols["sigma"], fig8_cols["ecpas"])
             if float(s) == sigma]
    fig6 = run_dir / f"fig6_sigma{index}.csv"
    if not fig6.exists():
        print(f"error: {fig6} not found", file=sys.stderr)
        return 1
    ecp = [float(e) for e in _read_metric_columns(fig6, ("ecp",))["ecp"]]
    report = fallacy_report_from_stats(np.array(ecp), np.array(ecpas), args.low_ecp)
    print(f"sigma = {sigma:g} (grid index {index})")
    print(report.to_text())
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except BrokenPipeError:
        return 2
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
