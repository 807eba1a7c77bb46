"""Loss metrics, the AdamW training loop with early stopping, and baselines."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import tensor as tn
from .data import WindowBatch, WindowSet
from .errors import ConfigError, NumericalError
from .optim import AdamW
from .tensor import Tensor

log = logging.getLogger(__name__)


def _check_pair(pred: Tensor, truth: Tensor) -> None:
    if pred.shape != truth.shape:
        raise ConfigError(f"prediction shape {pred.shape} != target shape {truth.shape}")


def mse(pred: Tensor, truth: Tensor) -> Tensor:
    _check_pair(pred, truth)
    diff = pred - truth
    return tn.mean(diff * diff)


def mae(pred: Tensor, truth: Tensor) -> Tensor:
    _check_pair(pred, truth)
    return tn.mean(tn.absolute(pred - truth))


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    batch_size: int = 16
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0
    clip_norm: float | None = None
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("lr and eps must be positive, weight_decay non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("betas must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch_size, max_epochs and eval_batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class EarlyStopState:
    best_val: float = float("inf")
    best_epoch: int = -1
    since_best: int = 0
    snapshot: dict | None = None
    patience: int = 3

    def update(self, epoch: int, val: float, model) -> bool:
        """Record one epoch; return True when training should stop."""
        if val < self.best_val:
            self.best_val, self.best_epoch, self.since_best = val, epoch, 0
            self.snapshot = model.snapshot()
            return False
        self.since_best += 1
        return self.since_best >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    seconds: float
    steps: int


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mse: float = float("inf")
    seconds: float = 0.0
    steps: int = 0


def make_optimizer(model, cfg: TrainConfig) -> AdamW:
    return AdamW(model.params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps,
                 weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)


def train_step(model, batch: WindowBatch, opt: AdamW) -> float:
    opt.zero_grad()
    out, _ = model.forward(batch)
    loss = mse(out, Tensor(np.asarray(batch.y, dtype=out.dtype)))
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericalError("training loss became non-finite")
    loss.backward()
    opt.step()
    return value


def train(model, train_set: WindowSet, val_set: WindowSet, cfg: TrainConfig = TrainConfig(),
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Minibatch MSE descent with seeded shuffling and patience-based early stopping.

    The model is left holding the parameters of the best validation epoch.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("training and validation splits must both hold at least one window")
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(model, cfg)
    stop = EarlyStopState(patience=cfg.patience)
    result = TrainResult()
    t0 = time.perf_counter()
    for epoch in range(cfg.max_epochs):
        e0 = time.perf_counter()
        losses, weights = [], []
        for batch in train_set.batches(cfg.batch_size, rng):
            losses.append(train_step(model, batch, opt))
            weights.append(batch.size)
        train_mse = float(np.average(losses, weights=weights))
        val_mse = evaluate(model, val_set, cfg.eval_batch_size).mse
        rec = EpochRecord(epoch, train_mse, val_mse, time.perf_counter() - e0, opt.state.t)
        result.history.append(rec)
        log.info("epoch %d train_mse=%.5f val_mse=%.5f", epoch, train_mse, val_mse)
        if on_epoch is not None:
            on_epoch(rec)
        if stop.update(epoch, val_mse, model):
            break
    if stop.snapshot is not None:
        model.load_snapshot(stop.snapshot)
    result.best_epoch, result.best_val_mse = stop.best_epoch, stop.best_val
    result.seconds = time.perf_counter() - t0
    result.steps = opt.state.t
    return result


def fit_batch(model, batch: WindowBatch, steps: int, cfg: TrainConfig = TrainConfig()) -> list[float]:
    """Repeated full-batch steps on one fixed batch; returns the loss before each step."""
    opt = make_optimizer(model, cfg)
    return [train_step(model, batch, opt) for _ in range(steps)]


@dataclass
class EvalResult:
    mae: float
    mse: float
    per_window_mse: np.ndarray
    per_window_mae: np.ndarray
    forecasts: np.ndarray | None = None


def evaluate_forecaster(forecast: Callable[[WindowBatch], np.ndarray], windows: WindowSet,
                        batch_size: int = 256, keep_forecasts: bool = False) -> EvalResult:
    """Aggregate MAE/MSE over every window and channel (normalized scale)."""
    if len(windows) == 0:
        raise ConfigError("evaluation set holds no windows")
    sq, ab, outs = [], [], []
    for batch in windows.batches(batch_size):
        pred = np.asarray(forecast(batch), dtype=np.float64)
        err = pred - batch.y
        sq.append((err ** 2).mean(axis=(1, 2)))
        ab.append(np.abs(err).mean(axis=(1, 2)))
        if keep_forecasts:
            outs.append(pred)
    per_sq, per_ab = np.concatenate(sq), np.concatenate(ab)
    # every window carries C * P elements, so the plain mean is the element-weighted mean
    return EvalResult(float(per_ab.mean()), float(per_sq.mean()), per_sq, per_ab,
                      np.concatenate(outs) if keep_forecasts else None)


def evaluate(model, windows: WindowSet, batch_size: int = 256, keep_forecasts: bool = False) -> EvalResult:
    return evaluate_forecaster(model.predict, windows, batch_size, keep_forecasts)


def persistence_baseline(batch: WindowBatch) -> np.ndarray:
    """Repeat each channel's last observed value across the horizon."""
    x = np.asarray(batch.x)
    if x.shape[-1] < 1:
        raise ConfigError("persistence needs at least one observed step")
    horizon = batch.y.shape[-1] if batch.y is not None else batch.fut_calendar.shape[1]
    return np.repeat(x[..., -1:], horizon, axis=-1)
