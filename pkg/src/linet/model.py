"""Li-Net forward pass: time/channel encoding, nonlinear block, decoding.

Shapes (B batch, C channels, T lookback, P horizon, T' = T // L_T,
C' = C // L_C):

    time gate      T_te [B, T, T']   normalized over T
    channel gate   T_ce [B, C, C']   normalized over C
    decode gate    T_cd [B, C, C']   normalized over C'
    horizon gate   T_td [B, P, T']   normalized over T'

Each gate is normalized along the axis its consuming matmul contracts.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as tn
from .blocks import (effective_heads, init_value, mlp_block_shapes, nonlinear_block_mlp,
                     nonlinear_block_transformer, transformer_block_shapes)
from .embedding import CALENDAR_SIZES, embed_calendar_indices
from .errors import ConfigError, ShapeError
from .gate import GateConfig, GateOutput, topk_softmax
from .tensor import Tensor

VARIANTS = ("full", "softmax", "primitive", "mlp3")
BLOCKS = ("mlp", "transformer")
GATES = ("time_encode", "channel_encode", "channel_decode", "time_decode")


@dataclass
class ModelConfig:
    channels: int
    lookback: int = 96
    horizon: int = 96
    time_compression: int = 2
    channel_compression: int = 2
    time_retention: float = 0.5
    channel_retention: float = 0.7
    d_embed: int = 32
    block: str = "mlp"
    mlp_hidden: int | None = None  # gate-logit MLP width, defaults to d_embed
    gate_mlp_depth: int = 2
    tf_layers: int = 1
    tf_heads: int = 4
    n_stores: int = 1
    n_items: int | None = None  # defaults to channels
    variant: str = "full"
    mlp3_hidden: int | None = None  # defaults to 4 * C * T'
    dtype: str = "float32"

    def __post_init__(self):
        if min(self.channels, self.lookback, self.horizon) < 1:
            raise ConfigError("channels, lookback and horizon must be positive")
        if self.time_compression < 1 or self.channel_compression < 1:
            raise ConfigError("compression levels must be >= 1")
        for name in ("time_retention", "channel_retention"):
            r = getattr(self, name)
            if not 0.0 < r <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {r}")
        if self.block not in BLOCKS:
            raise ConfigError(f"block must be one of {BLOCKS}, got {self.block!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.gate_mlp_depth not in (1, 2):
            raise ConfigError("gate_mlp_depth must be 1 or 2")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.d_embed < 1 or self.tf_layers < 1 or self.n_stores < 1:
            raise ConfigError("d_embed, tf_layers and n_stores must be positive")
        if self.mlp_hidden is None:
            self.mlp_hidden = self.d_embed
        if self.n_items is None:
            self.n_items = self.channels
        if self.mlp3_hidden is None:
            self.mlp3_hidden = 4 * self.channels * self.t_comp

    @property
    def t_comp(self) -> int:
        return max(1, self.lookback // self.time_compression)

    @property
    def c_comp(self) -> int:
        return max(1, self.channels // self.channel_compression)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def retentions(self) -> tuple[float, float]:
        """(time, channel) retention actually applied; the softmax variant keeps everything."""
        if self.variant == "softmax":
            return 1.0, 1.0
        return self.time_retention, self.channel_retention

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _mlp_shapes(prefix: str, f_in: int, f_out: int, hidden: int, depth: int) -> dict:
    if depth == 1:
        return {f"{prefix}.w1": (f_in, f_out), f"{prefix}.b1": (f_out,)}
    return {f"{prefix}.w1": (f_in, hidden), f"{prefix}.b1": (hidden,),
            f"{prefix}.w2": (hidden, f_out), f"{prefix}.b2": (f_out,)}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every named parameter and its extents, in a fixed order."""
    C, T, P = cfg.channels, cfg.lookback, cfg.horizon
    tc, cc, d = cfg.t_comp, cfg.c_comp, cfg.d_embed
    if cfg.variant == "mlp3":
        h = cfg.mlp3_hidden
        return {"m3.w1": (C * T, h), "m3.b1": (h,), "m3.w2": (h, h), "m3.b2": (h,),
                "m3.w3": (h, C * P), "m3.b3": (C * P,)}
    shapes: dict[str, tuple[int, ...]] = {}
    for fname, size in zip(("dow", "dom", "month", "hour"), CALENDAR_SIZES):
        shapes[f"emb.{fname}"] = (size, d)
    shapes["emb.store"] = (cfg.n_stores, d)
    shapes["emb.item"] = (cfg.n_items, d)
    hid, depth = cfg.mlp_hidden, cfg.gate_mlp_depth
    shapes.update(_mlp_shapes("te", 2 * d, tc, hid, depth))
    shapes.update(_mlp_shapes("ce1", tc + d, cc, hid, depth))
    shapes.update(_mlp_shapes("ce2", tc, cc, hid, depth))
    if cfg.block == "mlp":
        shapes.update(mlp_block_shapes(cc, tc))
    else:
        shapes.update(transformer_block_shapes(tc, cfg.tf_layers))
    shapes.update(_mlp_shapes("cd", tc, cc, hid, depth))
    shapes.update(_mlp_shapes("td", 2 * d, tc, hid, depth))
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return int(sum(int(np.prod(s)) for s in param_shapes(cfg).values()))


def model_bytes(cfg: ModelConfig, element_width: int = 4) -> int:
    return param_count(cfg) * element_width


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.startswith("emb."):
            value = rng.normal(0.0, 0.02, size=shape)
        else:
            value = init_value(name, shape, rng)
        params[name] = Tensor(value.astype(cfg.np_dtype), requires_grad=True, name=name)
    return params


def mlp_logits(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    """Per-slot Linear -> ReLU -> Linear (or a single Linear at depth 1)."""
    out = tn.linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"])
    if f"{prefix}.w2" in params:
        out = tn.linear(tn.relu(out), params[f"{prefix}.w2"], params[f"{prefix}.b2"])
    return out


@dataclass
class ForwardTrace:
    T_te: Tensor | None = None
    T_t: Tensor | None = None
    T_ce1: Tensor | None = None
    T_ce2: Tensor | None = None
    T_ce: Tensor | None = None
    T_e: Tensor | None = None
    R_b: Tensor | None = None
    T_cd: Tensor | None = None
    T_pre: Tensor | None = None
    T_td: Tensor | None = None
    T_out: Tensor | None = None
    gates: dict[str, GateOutput] = field(default_factory=dict)
    attention: list = field(default_factory=list)

    @property
    def masks(self) -> dict[str, np.ndarray]:
        return {k: g.mask for k, g in self.gates.items()}


def _gate(name: str, logits: Tensor, retention: float, axis: int, trace: ForwardTrace,
          frozen: dict | None) -> Tensor:
    out = topk_softmax(logits, GateConfig(retention, axis), None if frozen is None else frozen.get(name))
    trace.gates[name] = out
    return out.weights


def time_encode(x: Tensor, hist_date: Tensor, store: Tensor, params: dict, cfg: ModelConfig,
                trace: ForwardTrace | None = None, frozen: dict | None = None) -> tuple[Tensor, Tensor]:
    trace = trace if trace is not None else ForwardTrace()
    logits = mlp_logits(tn.concat_lastdim([hist_date, store]), params, "te")
    t_te = _gate("time_encode", logits, cfg.retentions[0], 1, trace, frozen)
    t_t = tn.matmul(x, t_te)
    trace.T_te, trace.T_t = t_te, t_t
    return t_t, t_te


def channel_encode(t_t: Tensor, item: Tensor, params: dict, cfg: ModelConfig,
                   trace: ForwardTrace | None = None, frozen: dict | None = None):
    trace = trace if trace is not None else ForwardTrace()
    ce1 = mlp_logits(tn.concat_lastdim([t_t, item]), params, "ce1")
    ce2 = mlp_logits(t_t, params, "ce2")
    t_ce = _gate("channel_encode", ce1 + ce2, cfg.retentions[1], 1, trace, frozen)
    t_e = tn.matmul(tn.transpose_last2(t_ce), t_t)
    trace.T_ce1, trace.T_ce2, trace.T_ce, trace.T_e = ce1, ce2, t_ce, t_e
    return t_e, t_ce, ce2


def nonlinear_block(t_e: Tensor, params: dict, cfg: ModelConfig, trace: ForwardTrace | None = None) -> Tensor:
    if cfg.block == "mlp":
        r_b = nonlinear_block_mlp(t_e, params)
    else:
        attn = trace.attention if trace is not None else None
        r_b = nonlinear_block_transformer(t_e, params, cfg.tf_layers, cfg.tf_heads, attn_out=attn)
    if trace is not None:
        trace.R_b = r_b
    return r_b


def channel_decode(r_b: Tensor, t_t: Tensor, ce2: Tensor, params: dict, cfg: ModelConfig,
                   trace: ForwardTrace | None = None, frozen: dict | None = None) -> Tensor:
    trace = trace if trace is not None else ForwardTrace()
    logits = mlp_logits(t_t, params, "cd")
    if logits.shape != ce2.shape:
        raise ShapeError(f"decode logits {logits.shape} do not match channel logits {ce2.shape}")
    t_cd = _gate("channel_decode", logits + ce2, cfg.retentions[1], 2, trace, frozen)
    t_pre = tn.matmul(t_cd, r_b) + t_t  # skip connection
    trace.T_cd, trace.T_pre = t_cd, t_pre
    return t_pre


def time_decode(t_pre: Tensor, fut_date: Tensor, store: Tensor, params: dict, cfg: ModelConfig,
                trace: ForwardTrace | None = None, frozen: dict | None = None) -> Tensor:
    trace = trace if trace is not None else ForwardTrace()
    logits = mlp_logits(tn.concat_lastdim([fut_date, store]), params, "td")
    t_td = _gate("time_decode", logits, cfg.retentions[0], 2, trace, frozen)
    out = tn.matmul(t_pre, tn.transpose_last2(t_td))
    trace.T_td, trace.T_out = t_td, out
    return out


class LiNet:
    """Parameters plus the forward composition for one ModelConfig."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        expected = param_shapes(cfg)
        if list(self.params) != list(expected) and set(self.params) != set(expected):
            raise ConfigError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    # -- embeddings -----------------------------------------------------
    def _embeddings(self, batch):
        cfg, p, dt = self.cfg, self.params, self.cfg.np_dtype
        B, T, P, d = batch.x.shape[0], cfg.lookback, cfg.horizon, cfg.d_embed
        if cfg.variant == "primitive":
            zeros = lambda *s: Tensor(np.zeros(s, dtype=dt))  # noqa: E731
            return zeros(B, T, d), zeros(B, P, d), zeros(B, T, d), zeros(B, P, d), zeros(B, cfg.channels, d)
        tables = [p["emb.dow"], p["emb.dom"], p["emb.month"], p["emb.hour"]]
        if batch.hist_date_vec is not None:
            hist = Tensor(np.asarray(batch.hist_date_vec, dtype=dt))
            fut = Tensor(np.asarray(batch.fut_date_vec, dtype=dt))
            if hist.shape[-1] != d:
                raise ConfigError(f"precomputed vectors have dim {hist.shape[-1]}, model expects {d}")
        else:
            hist = embed_calendar_indices(batch.hist_calendar, tables)
            fut = embed_calendar_indices(batch.fut_calendar, tables)
        store_ids = np.asarray(batch.store_ids)
        store_t = tn.take_rows(p["emb.store"], np.repeat(store_ids[:, None], T, axis=1))
        store_p = tn.take_rows(p["emb.store"], np.repeat(store_ids[:, None], P, axis=1))
        items = np.broadcast_to(np.asarray(batch.item_ids), (B, cfg.channels))
        item = tn.take_rows(p["emb.item"], items)
        return hist, fut, store_t, store_p, item

    def _check_batch(self, batch) -> None:
        cfg = self.cfg
        if batch.x.ndim != 3 or batch.x.shape[1:] != (cfg.channels, cfg.lookback):
            raise ShapeError(f"history {batch.x.shape} does not match [B, {cfg.channels}, {cfg.lookback}]")
        B = batch.x.shape[0]
        if batch.hist_calendar.shape[:2] != (B, cfg.lookback) or batch.fut_calendar.shape[:2] != (B, cfg.horizon):
            raise ShapeError("calendar features do not match the batch layout")

    # -- forward --------------------------------------------------------------
    def forward(self, batch, frozen_masks: dict | None = None) -> tuple[Tensor, ForwardTrace]:
        self._check_batch(batch)
        cfg, p = self.cfg, self.params
        x = Tensor(np.asarray(batch.x, dtype=cfg.np_dtype))
        trace = ForwardTrace()
        if cfg.variant == "mlp3":
            B = x.shape[0]
            h = tn.reshape(x, (B, 1, cfg.channels * cfg.lookback))
            h = tn.relu(tn.linear(h, p["m3.w1"], p["m3.b1"]))
            h = tn.relu(tn.linear(h, p["m3.w2"], p["m3.b2"]))
            h = tn.linear(h, p["m3.w3"], p["m3.b3"])
            trace.T_out = tn.reshape(h, (B, cfg.channels, cfg.horizon))
            return trace.T_out, trace
        hist, fut, store_t, store_p, item = self._embeddings(batch)
        t_t, _ = time_encode(x, hist, store_t, p, cfg, trace, frozen_masks)
        t_e, _, ce2 = channel_encode(t_t, item, p, cfg, trace, frozen_masks)
        r_b = nonlinear_block(t_e, p, cfg, trace)
        t_pre = channel_decode(r_b, t_t, ce2, p, cfg, trace, frozen_masks)
        out = time_decode(t_pre, fut, store_p, p, cfg, trace, frozen_masks)
        return out, trace

    __call__ = forward

    def predict(self, batch) -> np.ndarray:
        with tn.no_grad():
            out, _ = self.forward(batch)
        return out.data

    def param_count(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.params[k].data[...] = v

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()


def gate_element_counts(cfg: ModelConfig, batch_size: int = 1) -> dict[str, int]:
    """Elements held by the time gate versus a dense T x T attention map."""
    return {"gate": batch_size * cfg.lookback * cfg.t_comp,
            "dense": batch_size * cfg.lookback * cfg.lookback}


__all__ = [
    "ModelConfig", "LiNet", "ForwardTrace", "param_shapes", "param_count", "model_bytes",
    "init_params", "mlp_logits", "time_encode", "channel_encode", "nonlinear_block",
    "channel_decode", "time_decode", "gate_element_counts", "effective_heads", "VARIANTS", "GATES",
]
