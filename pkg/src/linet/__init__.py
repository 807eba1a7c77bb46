"""Sparse top-k gated encoder-decoder forecaster on a small numpy autodiff core."""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import RawSeries, SplitSpec, WindowBatch, load_csv, prepare, synthetic_series
from .errors import ConfigError, DataError, LinetError, NumericalError, ShapeError
from .gate import GateConfig, GateOutput, dense_softmax_gate, retention_to_k, topk_softmax
from .harness import ExperimentConfig, RunReport, ablate, emit_report, run_experiment, run_variant
from .model import LiNet, ModelConfig
from .optim import AdamW
from .tensor import Tensor, no_grad
from .training import TrainConfig, evaluate, persistence_baseline, train

__version__ = "0.1.0"

__all__ = [
    "AdamW", "ConfigError", "DataError", "ExperimentConfig", "GateConfig", "GateOutput", "LiNet",
    "LinetError", "ModelConfig", "NumericalError", "RawSeries", "RunReport", "ShapeError", "SplitSpec",
    "Tensor", "TrainConfig", "WindowBatch", "ablate", "dense_softmax_gate", "emit_report", "evaluate",
    "load_checkpoint", "load_csv", "no_grad", "persistence_baseline", "prepare", "retention_to_k",
    "run_experiment", "run_variant", "save_checkpoint", "synthetic_series", "topk_softmax", "train",
]
