"""Shape-preserving nonlinear blocks applied to the compressed [B, C', T'] features."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as tn
from .errors import ConfigError
from .tensor import Tensor


def mlp_block_shapes(c_comp: int, t_comp: int, prefix: str = "blk") -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.w_t": (t_comp, t_comp),
        f"{prefix}.b_t": (t_comp,),
        f"{prefix}.w_c": (c_comp, c_comp),
        f"{prefix}.b_c": (c_comp,),
    }


def nonlinear_block_mlp(x: Tensor, params: dict[str, Tensor], prefix: str = "blk") -> Tensor:
    """ReLU mixing along time, then along channels; output shape equals input shape."""
    w_t, w_c = params[f"{prefix}.w_t"], params[f"{prefix}.w_c"]
    if w_t.shape[0] != w_t.shape[1] or w_c.shape[0] != w_c.shape[1]:
        raise ConfigError("block weights must be square")
    r_t = tn.relu(tn.linear(x, w_t, params[f"{prefix}.b_t"]))
    r_c = tn.relu(tn.linear(tn.transpose_last2(r_t), w_c, params[f"{prefix}.b_c"]))
    return tn.transpose_last2(r_c)


def effective_heads(width: int, heads: int) -> int:
    return heads if heads >= 1 and width % heads == 0 else 1


def transformer_block_shapes(width: int, layers: int, prefix: str = "blk") -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    hidden = 4 * width
    for i in range(layers):
        p = f"{prefix}.{i}"
        shapes.update({
            f"{p}.ln1.g": (width,), f"{p}.ln1.b": (width,),
            f"{p}.wq": (width, width), f"{p}.bq": (width,),
            f"{p}.wk": (width, width), f"{p}.bk": (width,),
            f"{p}.wv": (width, width), f"{p}.bv": (width,),
            f"{p}.wo": (width, width), f"{p}.bo": (width,),
            f"{p}.ln2.g": (width,), f"{p}.ln2.b": (width,),
            f"{p}.ff1.w": (width, hidden), f"{p}.ff1.b": (hidden,),
            f"{p}.ff2.w": (hidden, width), f"{p}.ff2.b": (width,),
        })
    return shapes


def self_attention(x: Tensor, params: dict[str, Tensor], p: str, heads: int,
                   attn_out: list | None = None) -> Tensor:
    width = x.shape[-1]
    heads = effective_heads(width, heads)
    dh = width // heads
    q = tn.linear(x, params[f"{p}.wq"], params[f"{p}.bq"])
    k = tn.linear(x, params[f"{p}.wk"], params[f"{p}.bk"])
    v = tn.linear(x, params[f"{p}.wv"], params[f"{p}.bv"])
    outs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        qh, kh, vh = (q, k, v) if heads == 1 else (
            tn.slice_lastdim(q, lo, hi), tn.slice_lastdim(k, lo, hi), tn.slice_lastdim(v, lo, hi))
        scores = tn.matmul(qh, tn.transpose_last2(kh)) * (1.0 / math.sqrt(dh))
        weights = tn.softmax_axis(scores, -1)
        if attn_out is not None:
            attn_out.append(weights.data)
        outs.append(tn.matmul(weights, vh))
    mixed = tn.concat_lastdim(outs)
    return tn.linear(mixed, params[f"{p}.wo"], params[f"{p}.bo"])


def nonlinear_block_transformer(x: Tensor, params: dict[str, Tensor], layers: int = 1, heads: int = 4,
                                prefix: str = "blk", attn_out: list | None = None) -> Tensor:
    """Pre-norm encoder layers over the C' channel tokens (width T'), no positional encoding."""
    for i in range(layers):
        p = f"{prefix}.{i}"
        h = tn.layer_norm(x, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
        x = x + self_attention(h, params, p, heads, attn_out)
        h = tn.layer_norm(x, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
        h = tn.relu(tn.linear(h, params[f"{p}.ff1.w"], params[f"{p}.ff1.b"]))
        x = x + tn.linear(h, params[f"{p}.ff2.w"], params[f"{p}.ff2.b"])
    return x


def is_norm_gain(name: str) -> bool:
    return name.endswith(".g") and (".ln1." in name or ".ln2." in name)


def init_value(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform for matrices, ones for norm gains, zeros for every other vector."""
    if len(shape) == 2:
        bound = math.sqrt(6.0 / (shape[0] + shape[1]))
        return rng.uniform(-bound, bound, size=shape)
    if is_norm_gain(name):
        return np.ones(shape)
    return np.zeros(shape)
