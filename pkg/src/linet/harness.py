"""Experiment configuration, variant runs, and machine-readable reports."""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
import typing
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import (PreparedData, RawSeries, SplitSpec, latest_window, load_csv, prepare, stride_for_budget,
                   synthetic_series)
from .errors import ConfigError
from .model import VARIANTS, LiNet, ModelConfig, model_bytes, param_count
from .training import EvalResult, TrainConfig, TrainResult, evaluate, evaluate_forecaster, persistence_baseline, train

log = logging.getLogger(__name__)

BENCHMARK_HORIZONS = (96, 192, 336, 720)
SYNTHETIC = "synthetic"

# Published ablation rows (MAE, MSE) keyed by (dataset, horizon, variant), shown beside achieved values.
REFERENCE = {
    ("ettm2", 96, "full"): (0.2284, 0.1131),
    ("ettm2", 96, "softmax"): (0.236, 0.1175),
    ("ettm2", 96, "mlp3"): (0.5415, 0.4847),
    ("ettm2", 96, "primitive"): (0.2418, 0.1215),
    ("ettm2", 336, "full"): (0.2891, 0.1723),
    ("ettm2", 336, "softmax"): (0.2983, 0.1814),
    ("ettm2", 336, "mlp3"): (0.5542, 0.5171),
    ("ettm2", 336, "primitive"): (0.3081, 0.1937),
    ("electricity", 96, "full"): (0.275, 0.1757),
    ("electricity", 96, "softmax"): (0.2804, 0.1882),
    ("electricity", 96, "mlp3"): (0.8225, 0.9718),
    ("electricity", 96, "primitive"): (0.2816, 0.1806),
    ("electricity", 336, "full"): (0.3029, 0.2022),
    ("electricity", 336, "softmax"): (0.3071, 0.2076),
    ("electricity", 336, "mlp3"): (0.8205, 0.9588),
    ("electricity", 336, "primitive"): (0.3137, 0.215),
}

VARIANT_NOTES = {
    "full": "",
    "softmax": "every gate keeps all entries (retention 1.0)",
    "primitive": "calendar, store and item embedding inputs replaced by zero vectors",
    "mlp3": "encoder-decoder replaced by a three-layer ReLU MLP over the flattened window",
}


@dataclass
class ExperimentConfig:
    dataset: str = SYNTHETIC
    horizon: int = 96
    lookback: int = 96
    variant: str = "full"
    seed: int = 0
    out: str = "runs"
    format: str = "jsonl"
    stride: int = 0  # 0 picks the smallest stride keeping train windows <= max_train_windows
    max_train_windows: int = 5000
    eval_stride: int = 1
    synthetic_steps: int = 2000
    synthetic_channels: int = 3
    # model
    time_compression: int = 2
    channel_compression: int = 2
    time_retention: float = 0.5
    channel_retention: float = 0.7
    d_embed: int = 32
    block: str = "mlp"
    mlp_hidden: int | None = None
    gate_mlp_depth: int = 2
    tf_layers: int = 1
    tf_heads: int = 4
    mlp3_hidden: int | None = None
    dtype: str = "float32"
    # training
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    batch_size: int = 16
    max_epochs: int = 10
    patience: int = 3
    clip_norm: float | None = None
    eval_batch_size: int = 256

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.format not in ("jsonl", "csv"):
            raise ConfigError(f"format must be jsonl or csv, got {self.format!r}")
        if self.horizon < 1 or self.lookback < 1:
            raise ConfigError("horizon and lookback must be positive")
        if self.horizon not in BENCHMARK_HORIZONS:
            log.debug("horizon %d is outside the benchmark set %s", self.horizon, BENCHMARK_HORIZONS)
        if self.stride < 0 or self.eval_stride < 1 or self.max_train_windows < 1:
            raise ConfigError("stride must be >= 0, eval_stride and max_train_windows >= 1")
        if self.variant == "mlp3" and self.mlp3_hidden is not None and self.mlp3_hidden < 1:
            raise ConfigError("mlp3_hidden must be positive")
        # surface model/training field errors before any data is read
        self.train_config()
        self.model_config(channels=1)

    # -- parsing ----------------------------------------------------------------
    @classmethod
    def field_types(cls) -> dict[str, type]:
        hints = typing.get_type_hints(cls)
        return {f.name: hints[f.name] for f in fields(cls)}

    @classmethod
    def parse_value(cls, key: str, text: str):
        types = cls.field_types()
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        hint = types[key]
        optional = type(None) in typing.get_args(hint)
        base = next((a for a in typing.get_args(hint) if a is not type(None)), hint)
        text = text.strip()
        if optional and text.lower() in ("", "none", "null"):
            return None
        try:
            if base is bool:
                if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(text)
                return text.lower() in ("true", "1", "yes")
            if base is int:
                return int(text)
            if base is float:
                value = float(text)
                if not math.isfinite(value):
                    raise ValueError(text)
                return value
        except ValueError:
            raise ConfigError(f"config key {key!r}: cannot parse {text!r} as {base.__name__}") from None
        return text

    @classmethod
    def parse_text(cls, text: str, source: str = "<config>") -> dict:
        """Flat ``key = value`` lines; ``#`` starts a comment."""
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in values:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            try:
                values[key] = cls.parse_value(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None
        return values

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls(**{**cls.parse_text(text, str(path)), **overrides})

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k} = {'none' if v is None else v}\n" for k, v in asdict(self).items())

    # -- derived configs ------------------------------------------------------------
    def model_config(self, channels: int, n_items: int | None = None) -> ModelConfig:
        keys = {f.name for f in fields(ModelConfig)} & set(asdict(self))
        return ModelConfig(channels=channels, n_items=n_items, **{k: getattr(self, k) for k in keys})

    def train_config(self) -> TrainConfig:
        keys = {f.name for f in fields(TrainConfig)} & set(asdict(self))
        return TrainConfig(**{k: getattr(self, k) for k in keys})

    @property
    def dataset_key(self) -> str:
        return Path(self.dataset).stem.lower()


def load_dataset(cfg: ExperimentConfig) -> RawSeries:
    if cfg.dataset == SYNTHETIC:
        return synthetic_series(cfg.synthetic_steps, cfg.synthetic_channels, seed=cfg.seed)
    return load_csv(cfg.dataset)


def prepare_data(cfg: ExperimentConfig, series: RawSeries | None = None) -> tuple[PreparedData, int]:
    series = load_dataset(cfg) if series is None else series
    stride = cfg.stride
    if stride == 0:
        stride = stride_for_budget(SplitSpec().lengths(len(series))[0], cfg.lookback, cfg.horizon,
                                   cfg.max_train_windows)
    return prepare(series, cfg.lookback, cfg.horizon, stride, cfg.eval_stride), stride


@dataclass
class RunReport:
    mae: float
    mse: float
    train_seconds: float
    test_seconds: float
    param_count: int
    model_bytes: int
    seed: int
    variant: str
    dataset: str
    horizon: int
    lookback: int
    persistence_mae: float
    persistence_mse: float
    best_epoch: int
    epochs_run: int
    train_windows: int
    test_windows: int
    stride: int
    reference: dict = field(default_factory=dict)
    note: str = ""
    config: dict = field(default_factory=dict)
    environment: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("mae", "mse", "train_seconds", "test_seconds", "persistence_mae", "persistence_mse"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"report field {name} must be finite and >= 0, got {value}")

    def to_record(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        line = (f"{self.variant:<9} mae={self.mae:.4f} mse={self.mse:.4f} "
                f"(persistence mse={self.persistence_mse:.4f}) train={self.train_seconds:.1f}s "
                f"params={self.param_count}")
        if self.reference:
            line += f" | published mae={self.reference['mae']} mse={self.reference['mse']}"
        return line


REPORT_FIELDS = [f.name for f in fields(RunReport)]
_NESTED = {"reference", "config", "environment"}


def environment() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__,
            "machine": platform.machine(), "system": platform.system()}


@dataclass
class Experiment:
    """Everything a run produced, for callers that need more than the report."""
    report: RunReport
    model: LiNet
    data: PreparedData
    training: TrainResult
    test: EvalResult


def run_experiment(cfg: ExperimentConfig, series: RawSeries | None = None, keep_forecasts: bool = False,
                   on_epoch=None) -> Experiment:
    data, stride = prepare_data(cfg, series)
    if len(data.val) == 0 or len(data.test) == 0:
        raise ConfigError("validation and test splits must each hold at least one window")
    items = np.asarray(data.series.item_ids)
    mcfg = cfg.model_config(data.series.n_channels, int(items.max()) + 1)
    tcfg = cfg.train_config()
    model = LiNet(mcfg, seed=cfg.seed)
    log.info("variant=%s params=%d train_windows=%d stride=%d", cfg.variant, model.param_count(),
             len(data.train), stride)
    history = train(model, data.train, data.val, tcfg, on_epoch=on_epoch)
    t0 = time.perf_counter()
    result = evaluate(model, data.test, tcfg.eval_batch_size, keep_forecasts)
    test_seconds = time.perf_counter() - t0
    base = evaluate_forecaster(persistence_baseline, data.test, tcfg.eval_batch_size)
    report = make_report(cfg, mcfg, tcfg, result, base, history, test_seconds, len(data.train),
                         len(data.test), stride)
    return Experiment(report, model, data, history, result)


def make_report(cfg: ExperimentConfig, mcfg: ModelConfig, tcfg: TrainConfig, result: EvalResult,
                base: EvalResult, history: TrainResult | None, test_seconds: float, train_windows: int,
                test_windows: int, stride: int) -> RunReport:
    ref = REFERENCE.get((cfg.dataset_key, cfg.horizon, cfg.variant))
    echo = {**cfg.to_dict(), "stride": stride, "model": mcfg.to_dict(), "train": tcfg.to_dict(),
            "effective_retentions": list(mcfg.retentions)}
    return RunReport(
        mae=result.mae, mse=result.mse,
        train_seconds=history.seconds if history else 0.0, test_seconds=test_seconds,
        param_count=param_count(mcfg), model_bytes=model_bytes(mcfg),
        seed=cfg.seed, variant=cfg.variant, dataset=cfg.dataset, horizon=cfg.horizon, lookback=cfg.lookback,
        persistence_mae=base.mae, persistence_mse=base.mse,
        best_epoch=history.best_epoch if history else -1, epochs_run=len(history.history) if history else 0,
        train_windows=train_windows, test_windows=test_windows, stride=stride,
        reference={"mae": ref[0], "mse": ref[1]} if ref else {},
        note=VARIANT_NOTES[cfg.variant], config=echo, environment=environment())


def run_variant(cfg: ExperimentConfig, series: RawSeries | None = None) -> RunReport:
    return run_experiment(cfg, series).report


def ablate(cfg: ExperimentConfig, variants=VARIANTS, series: RawSeries | None = None) -> list[RunReport]:
    """Every variant on the same data and seed, sequentially."""
    series = load_dataset(cfg) if series is None else series
    return [run_variant(cfg.replace(variant=v), series) for v in variants]


def evaluate_checkpoint(cfg: ExperimentConfig, model: LiNet, series: RawSeries | None = None,
                        keep_forecasts: bool = False) -> tuple[RunReport, EvalResult, PreparedData]:
    data, stride = prepare_data(cfg, series)
    if len(data.test) == 0:
        raise ConfigError("test split holds no windows")
    t0 = time.perf_counter()
    result = evaluate(model, data.test, cfg.eval_batch_size, keep_forecasts)
    seconds = time.perf_counter() - t0
    base = evaluate_forecaster(persistence_baseline, data.test, cfg.eval_batch_size)
    cfg = cfg.replace(variant=model.cfg.variant)
    report = make_report(cfg, model.cfg, cfg.train_config(), result, base, None, seconds,
                         len(data.train), len(data.test), stride)
    return report, result, data


def forecast_latest(model: LiNet, data: PreparedData) -> tuple[list[str], np.ndarray]:
    """Forecast the horizon after the final observed step, on the original scale."""
    batch = latest_window(data.series, data.normalizer, model.cfg.lookback, model.cfg.horizon)
    pred = model.predict(batch)[0]
    stamps = data.series.future_timestamps(model.cfg.horizon)
    return stamps, data.normalizer.invert_forecast(pred[None])[0]


# -- report files -----------------------------------------------------------------

def _flatten(record: dict) -> dict:
    return {k: json.dumps(v, sort_keys=True) if k in _NESTED else v for k, v in record.items()}


def emit_report(report: RunReport | dict, path: str | Path, fmt: str = "jsonl") -> Path:
    """Append one record; csv files get a header on creation and must keep it."""
    record = report.to_record() if isinstance(report, RunReport) else dict(report)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "jsonl":
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=False) + "\n")
    elif fmt == "csv":
        names = list(record)
        fresh = not path.exists() or path.stat().st_size == 0
        if not fresh:
            with path.open(newline="", encoding="utf-8") as fh:
                header = next(csv.reader(fh), [])
            if header != names:
                raise ConfigError(f"{path}: existing header does not match report fields")
        with path.open("a", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=names, lineterminator="\n")
            if fresh:
                writer.writeheader()
            writer.writerow(_flatten(record))
    else:
        raise ConfigError(f"format must be jsonl or csv, got {fmt!r}")
    return path


def _coerce(key: str, text: str):
    if key in _NESTED:
        return json.loads(text) if text else {}
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_reports(path: str | Path) -> list[dict]:
    path = Path(path)
    if path.suffix == ".csv":
        with path.open(newline="", encoding="utf-8") as fh:
            return [{k: _coerce(k, v) for k, v in row.items()} for row in csv.DictReader(fh)]
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def write_table(rows: list[dict], path: str | Path, fmt: str = "csv") -> Path:
    """Overwrite ``path`` with plain rows (history, bench, forecasts)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "jsonl":
        path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
        return path
    with path.open("w", newline="", encoding="utf-8") as fh:
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return path
