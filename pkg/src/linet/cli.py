"""Command-line entry point: ``linet <command> [options]``.

Exit status: 0 success, 1 failed checks or I/O trouble, 2 configuration
error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import harness
from .checkpoint import load_checkpoint, save_checkpoint
from .diagnostics import SCOPES, bench, run_gradchecks
from .errors import ConfigError, DataError, NumericalError
from .harness import ExperimentConfig
from .model import VARIANTS

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("linet")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat 'key = value' config file")
    p.add_argument("--dataset", help="wide CSV with a leading date column, or 'synthetic'")
    p.add_argument("--horizon", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--figures", action="store_true", help="also write PNG figures next to the reports")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linet", description="Sparse-gated multi-channel forecaster.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one variant and write a checkpoint plus report")
    _common(p)

    for name, text in (("evaluate", "score a checkpoint on the test split"),
                       ("predict", "forecast the horizon after the last observed step")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--checkpoint", type=Path, help="defaults to <out>/model.linet")

    p = sub.add_parser("ablate", help="run every variant with one seed")
    _common(p)
    p.add_argument("--variants", default=",".join(VARIANTS), help="comma-separated subset")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    _common(p)
    p.add_argument("--scope", action="append", choices=SCOPES, help="repeatable; default all")

    p = sub.add_parser("bench", help="forward+backward timing and gate element counts over lookback")
    _common(p)
    p.add_argument("--sizes", default="128,256,512", help="comma-separated lookback lengths")
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--repeats", type=int, default=3)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {k: getattr(args, k) for k in ("dataset", "horizon", "variant", "seed", "out", "format")
                 if getattr(args, k, None) is not None}
    if args.config is not None:
        return ExperimentConfig.from_file(args.config, **overrides)
    return ExperimentConfig(**overrides)


def _ints(text: str, what: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise ConfigError(f"{what} must hold positive integers")
    return values


def _ext(cfg: ExperimentConfig) -> str:
    return "jsonl" if cfg.format == "jsonl" else "csv"


def cmd_train(args, cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    exp = harness.run_experiment(cfg, keep_forecasts=args.figures,
                                 on_epoch=lambda r: log.info("epoch %d val_mse=%.5f", r.epoch, r.val_mse))
    save_checkpoint(exp.model, out / "model.linet")
    harness.emit_report(exp.report, out / f"report.{_ext(cfg)}", cfg.format)
    harness.write_table([asdict(r) for r in exp.training.history], out / f"history.{_ext(cfg)}", cfg.format)
    (out / "experiment.cfg").write_text(cfg.to_text(), encoding="utf-8")
    print(exp.report.summary())
    if args.figures:
        from . import plots
        plots.plot_history(exp.training, out / "history.png")
        first = exp.data.test.batch(np.arange(1))
        plots.plot_forecast(first.x[0], first.y[0], exp.test.forecasts[0], out / "forecast.png",
                            exp.data.series.channels)
    return EXIT_OK


def _load(args, cfg: ExperimentConfig):
    path = args.checkpoint or Path(cfg.out) / "model.linet"
    if not path.exists():
        raise ConfigError(f"checkpoint {path} not found; run 'linet train' first or pass --checkpoint")
    model = load_checkpoint(path)
    if (model.cfg.lookback, model.cfg.horizon) != (cfg.lookback, cfg.horizon):
        cfg = cfg.replace(lookback=model.cfg.lookback, horizon=model.cfg.horizon)
    return model, cfg


def cmd_evaluate(args, cfg: ExperimentConfig) -> int:
    model, cfg = _load(args, cfg)
    report, result, data = harness.evaluate_checkpoint(cfg, model, keep_forecasts=args.figures)
    harness.emit_report(report, Path(cfg.out) / f"eval.{_ext(cfg)}", cfg.format)
    print(report.summary())
    if args.figures:
        from . import plots
        first = data.test.batch(np.arange(1))
        plots.plot_forecast(first.x[0], first.y[0], result.forecasts[0], Path(cfg.out) / "eval_forecast.png",
                            data.series.channels)
    return EXIT_OK


def cmd_predict(args, cfg: ExperimentConfig) -> int:
    model, cfg = _load(args, cfg)
    data, _ = harness.prepare_data(cfg)
    stamps, forecast = harness.forecast_latest(model, data)
    channels = data.series.channels
    rows = [{"date": ts, **{c: float(forecast[i, j]) for i, c in enumerate(channels)}}
            for j, ts in enumerate(stamps)]
    path = harness.write_table(rows, Path(cfg.out) / f"forecast.{_ext(cfg)}", cfg.format)
    print(f"wrote {len(rows)} forecast steps to {path}")
    if args.figures:
        from . import plots
        hist = data.series.values[:, -model.cfg.lookback:]
        plots.plot_forecast(hist, None, forecast, Path(cfg.out) / "predict.png", channels)
    return EXIT_OK


def cmd_ablate(args, cfg: ExperimentConfig) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = set(variants) - set(VARIANTS)
    if unknown:
        raise ConfigError(f"unknown variant(s) {sorted(unknown)}; choose from {', '.join(VARIANTS)}")
    reports = harness.ablate(cfg, variants)
    path = Path(cfg.out) / f"ablation.{_ext(cfg)}"
    for r in reports:
        harness.emit_report(r, path, cfg.format)
        print(r.summary())
    if args.figures:
        from . import plots
        plots.plot_ablation([r.to_record() for r in reports], Path(cfg.out) / "ablation.png")
    return EXIT_OK


def cmd_gradcheck(args, cfg: ExperimentConfig) -> int:
    reports = run_gradchecks(cfg.seed, tuple(args.scope or SCOPES))
    rows = []
    for r in reports:
        print(r.line())
        rows.append({"name": r.name, "passed": r.passed, "max_rel_err": r.max_rel_err, "tol": r.tol,
                     "coords": r.n_coords, "seed": cfg.seed})
    harness.write_table(rows, Path(cfg.out) / f"gradcheck.{_ext(cfg)}", cfg.format)
    if any(r.nan_at is not None for r in reports):
        return EXIT_NUMERIC
    failed = sum(not r.passed for r in reports)
    print(f"{len(reports) - failed}/{len(reports)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_bench(args, cfg: ExperimentConfig) -> int:
    sizes = _ints(args.sizes, "--sizes")
    channels = cfg.synthetic_channels
    if cfg.dataset != harness.SYNTHETIC:
        channels = harness.load_dataset(cfg).n_channels
    rows = bench(cfg.model_config(channels), sizes, args.batch_size, args.repeats, cfg.seed)
    table = [{**asdict(r), "gate_over_dense": r.ratio} for r in rows]
    harness.write_table(table, Path(cfg.out) / f"bench.{_ext(cfg)}", cfg.format)
    print(f"{'T':>6} {'gate':>10} {'dense':>10} {'ratio':>6} {'ms':>8} {'peak_bytes':>12}")
    for r in rows:
        print(f"{r.lookback:>6} {r.gate_elements:>10} {r.dense_elements:>10} {r.ratio:>6.3f} "
              f"{r.forward_backward_seconds * 1e3:>8.2f} {r.peak_live_bytes:>12}")
    if args.figures:
        from . import plots
        plots.plot_bench(rows, Path(cfg.out) / "bench.png")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "predict": cmd_predict,
            "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
