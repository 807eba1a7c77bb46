"""Top-K softmax gating.

Along the gate axis only the k largest logits survive; softmax is taken
over the survivors and every other position gets weight exactly zero.
The gate axis is always the axis contracted by the matmul that consumes
the weights, so each output slot is a convex combination of sources.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .tensor import Tensor, softmax_axis, softmax_grad


@dataclass(frozen=True)
class GateConfig:
    retention: float
    axis: int = -1

    def __post_init__(self):
        if not (0.0 < self.retention <= 1.0):
            raise ConfigError(f"retention must lie in (0, 1], got {self.retention}")


@dataclass
class GateOutput:
    weights: Tensor
    mask: np.ndarray  # True where the entry is in the selected set
    k: int
    axis: int


def retention_to_k(retention: float, axis_len: int) -> int:
    """k = clamp(ceil(retention * axis_len), 1, axis_len)."""
    if not (0.0 < retention <= 1.0):
        raise ConfigError(f"retention must lie in (0, 1], got {retention}")
    if axis_len < 1:
        raise ConfigError(f"gate axis length must be positive, got {axis_len}")
    # round before ceil so 0.7 * 10 = 7.000000000000001 stays 7
    k = math.ceil(round(retention * axis_len, 9))
    return min(max(k, 1), axis_len)


def topk_mask(z: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Boolean mask of the k largest entries per slice; ties go to the lower index."""
    n = z.shape[axis]
    if k >= n:
        return np.ones(z.shape, dtype=bool)
    moved = np.moveaxis(z, axis, -1)
    order = np.argsort(-moved, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(moved.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    return np.moveaxis(mask, -1, axis)


def _resolve_axis(z: Tensor, axis: int) -> int:
    if not -z.ndim <= axis < z.ndim:
        raise ConfigError(f"gate axis {axis} invalid for logits of rank {z.ndim}")
    return axis % z.ndim


def topk_softmax(z: Tensor, cfg: GateConfig, mask: np.ndarray | None = None) -> GateOutput:
    """Sparse softmax over the top-k logits along ``cfg.axis``.

    Passing ``mask`` freezes the selection (used by gradient checks and
    by callers replaying a previous forward pass).
    """
    axis = _resolve_axis(z, cfg.axis)
    if not np.all(np.isfinite(z.data)):
        raise NumericalError("gate logits contain non-finite values")
    k = retention_to_k(cfg.retention, z.shape[axis])
    if mask is None:
        mask = topk_mask(z.data, k, axis)
    elif mask.shape != z.shape:
        raise ConfigError(f"frozen mask shape {mask.shape} != logits shape {z.shape}")
    weights = softmax_axis(z, axis, mask=mask)
    return GateOutput(weights=weights, mask=mask, k=k, axis=axis)


def topk_softmax_backward(grad_out: np.ndarray, out: GateOutput) -> np.ndarray:
    """Gradient w.r.t. the logits with the selection held constant.

    Within the selected set dp_i/dz_j = p_i (delta_ij - p_j); unselected
    positions have p = 0 and therefore receive zero gradient.
    """
    return softmax_grad(out.weights.data, np.asarray(grad_out), out.axis)


def dense_softmax_gate(z: Tensor, axis: int = -1) -> GateOutput:
    """Plain softmax expressed as a gate with every entry selected."""
    return topk_softmax(z, GateConfig(1.0, axis))
