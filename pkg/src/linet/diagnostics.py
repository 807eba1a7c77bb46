"""Gradient-check suites and the gate scaling benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import tensor as tn
from .blocks import (init_value, mlp_block_shapes, nonlinear_block_mlp, nonlinear_block_transformer,
                     transformer_block_shapes)
from .data import WindowBatch
from .embedding import CALENDAR_SIZES, PairBatch, cosent_loss, cosine, embed_calendar_indices, mean_pool
from .errors import ConfigError
from .gate import GateConfig, topk_softmax
from .gradcheck import GradCheckReport, grad_check, kink_margin
from .model import LiNet, ModelConfig, gate_element_counts
from .tensor import Tensor
from .training import mae, mse

SCOPES = ("op", "module", "model")
KINK_MARGIN = 1e-3


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


class _Projection:
    """Fixed random weights drawn on first use, so ops whose plain sum is constant still get checked."""

    def __init__(self, rng: np.random.Generator):
        self.rng, self.cache = rng, {}

    def __call__(self, out: Tensor) -> Tensor:
        if out.shape not in self.cache:
            self.cache[out.shape] = self.rng.normal(size=out.shape)
        return tn.sum(out * Tensor(self.cache[out.shape]))


def _away_from_zero(rng, shape, margin=0.2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _shape(rng, rank=None):
    rank = rank or int(rng.integers(1, 4))
    return tuple(int(s) for s in rng.integers(1, 5, size=rank))


def op_checks(rng: np.random.Generator) -> Iterator[tuple[str, Callable, list[Tensor]]]:
    """(name, loss function, inputs) for every primitive op at random shapes."""
    s = _shape(rng)
    w = _Projection(rng)
    yield "add", lambda a, b: w(tn.add(a, b)), [_t(rng.normal(size=s)), _t(rng.normal(size=s))]
    yield "add_bias", lambda a, b: w(tn.add(a, b)), [_t(rng.normal(size=s)), _t(rng.normal(size=s[-1:]))]
    yield "sub", lambda a, b: w(tn.sub(a, b)), [_t(rng.normal(size=s)), _t(rng.normal(size=s))]
    yield "mul", lambda a, b: w(tn.mul(a, b)), [_t(rng.normal(size=s)), _t(rng.normal(size=s))]
    yield "div", lambda a, b: w(tn.div(a, b)), [_t(rng.normal(size=s)), _t(_away_from_zero(rng, s, 0.5))]
    yield "scale", lambda a: w(tn.scale(a, 1.7)), [_t(rng.normal(size=s))]
    yield "relu", lambda a: w(tn.relu(a)), [_t(_away_from_zero(rng, s))]
    yield "absolute", lambda a: w(tn.absolute(a)), [_t(_away_from_zero(rng, s))]
    yield "sqrt", lambda a: w(tn.sqrt(a)), [_t(rng.uniform(0.5, 2.0, size=s))]
    yield "exp", lambda a: w(tn.exp(a)), [_t(rng.normal(size=s))]
    yield "log", lambda a: w(tn.log(a)), [_t(rng.uniform(0.5, 2.0, size=s))]
    b, m, k, n = (int(v) for v in rng.integers(1, 5, size=4))
    yield "matmul_batched", lambda x, y: w(tn.matmul(x, y)), \
        [_t(rng.normal(size=(b, m, k))), _t(rng.normal(size=(b, k, n)))]
    yield "matmul_shared_rhs", lambda x, y: w(tn.matmul(x, y)), \
        [_t(rng.normal(size=(b, m, k))), _t(rng.normal(size=(k, n)))]
    yield "linear", lambda x, wt, bias: w(tn.linear(x, wt, bias)), \
        [_t(rng.normal(size=(b, m, k))), _t(rng.normal(size=(k, n))), _t(rng.normal(size=n))]
    yield "transpose_last2", lambda a: w(tn.transpose_last2(a)), [_t(rng.normal(size=(b, m, k)))]
    yield "concat_lastdim", lambda x, y: w(tn.concat_lastdim([x, y])), \
        [_t(rng.normal(size=(b, m, k))), _t(rng.normal(size=(b, m, n)))]
    yield "slice_lastdim", lambda a: w(tn.slice_lastdim(a, 0, max(1, k - 1))), [_t(rng.normal(size=(b, m, k)))]
    yield "reshape", lambda a: w(tn.reshape(a, (b * m, k))), [_t(rng.normal(size=(b, m, k)))]
    rows = rng.integers(0, m, size=(b, k))
    yield "take_rows", lambda tab: w(tn.take_rows(tab, rows)), [_t(rng.normal(size=(m, n)))]
    yield "sum_axis", lambda a: w(tn.sum(a, axis=-1)), [_t(rng.normal(size=s))]
    c = Tensor(rng.normal(size=s))
    yield "mean", lambda a: tn.mean(a * c), [_t(rng.normal(size=s))]
    yield "log1p_sum_exp", lambda a: tn.log1p_sum_exp(a), [_t(rng.normal(size=(int(rng.integers(1, 9)),)))]
    for axis in range(3):
        yield f"softmax_axis{axis}", lambda a, ax=axis: w(tn.softmax_axis(a, ax)), [_t(rng.normal(size=(b, m, k)))]
    yield "layer_norm", lambda x, g, be: w(tn.layer_norm(x, g, be)), \
        [_t(rng.normal(size=(b, m, k + 1))), _t(rng.normal(size=k + 1)), _t(rng.normal(size=k + 1))]


def _tie_free(rng, shape):
    # distinct gaps so the top-k boundary sits far from any finite-difference step
    z = rng.permutation(np.prod(shape)).reshape(shape) * 0.3
    return z + rng.normal(scale=0.05, size=shape)


def module_checks(rng: np.random.Generator) -> Iterator[tuple[str, Callable, list[Tensor]]]:
    w = _Projection(rng)
    for r in (0.3, 0.7, 1.0):
        z = _tie_free(rng, (2, 6, 3))
        mask = topk_softmax(Tensor(z), GateConfig(r, axis=1)).mask
        yield f"topk_softmax_r{r}", lambda a, m=mask, r=r: w(topk_softmax(a, GateConfig(r, 1), m).weights), [_t(z)]
    vecs = [_t(rng.normal(size=5)) for _ in range(4)]
    yield "cosent_loss", lambda *v: cosent_loss(PairBatch(list(v), [(0, 1), (2, 3)], [(0, 2), (1, 3)], lam=5.0)), vecs
    yield "cosine", lambda u, v: cosine(u, v), [_t(rng.normal(size=6)), _t(rng.normal(size=6))]
    yield "mean_pool", lambda a: w(mean_pool(a)), [_t(rng.normal(size=(4, 3)))]
    tables = [_t(rng.normal(size=(n, 3))) for n in CALENDAR_SIZES]
    idx = np.stack([rng.integers(0, n, size=(2, 5)) for n in CALENDAR_SIZES], axis=-1)
    yield "embed_calendar", lambda *tabs: w(embed_calendar_indices(idx, tabs)), tables
    yield "mse", lambda p, y: mse(p, y), [_t(rng.normal(size=(2, 3, 4))), _t(rng.normal(size=(2, 3, 4)))]
    yield "mae", lambda p, y: mae(p, y), [_t(_away_from_zero(rng, (2, 3, 4))), _t(np.zeros((2, 3, 4)))]
    cc, tc = 3, 4
    mlp_names = list(mlp_block_shapes(cc, tc))
    mlp_params = [_t(rng.uniform(-1, 1, size=s)) for s in mlp_block_shapes(cc, tc).values()]
    yield "nonlinear_block_mlp", lambda x, *ps: w(nonlinear_block_mlp(x, dict(zip(mlp_names, ps)))), \
        [_t(rng.normal(size=(2, cc, tc)))] + mlp_params
    tf_shapes = transformer_block_shapes(tc, 1)
    tf_names = list(tf_shapes)
    tf_params = [_t(init_value(n, s, rng) + rng.normal(scale=0.1, size=s)) for n, s in tf_shapes.items()]
    yield "nonlinear_block_transformer", \
        lambda x, *ps: w(nonlinear_block_transformer(x, dict(zip(tf_names, ps)), 1, 2)), \
        [_t(rng.normal(size=(2, cc, tc)))] + tf_params


def random_batch(cfg: ModelConfig, batch_size: int, rng: np.random.Generator) -> WindowBatch:
    """Random-normal windows with random calendar rows; useful for checks and timing."""
    C, T, P = cfg.channels, cfg.lookback, cfg.horizon
    cal = lambda n: np.stack([rng.integers(0, s, size=(batch_size, n)) for s in CALENDAR_SIZES], -1)  # noqa: E731
    return WindowBatch(rng.normal(size=(batch_size, C, T)), rng.normal(size=(batch_size, C, P)),
                       cal(T), cal(P), np.zeros(batch_size, dtype=np.int64), np.arange(C))


def model_check(block: str, seed: int, max_coords: int | None = None) -> GradCheckReport:
    """Full forward + MSE at B=2, C=4, T=8, P=4, L_T=L_C=2 with every gate mask frozen."""
    cfg = ModelConfig(channels=4, lookback=8, horizon=4, block=block, dtype="float64",
                      d_embed=4, tf_heads=2)
    rng = np.random.default_rng(seed)
    base = LiNet(cfg, seed=seed).snapshot()
    batch = random_batch(cfg, 2, rng)
    target = Tensor(batch.y)
    # zero biases put ReLUs exactly on their kink; redraw until every input clears it
    for _ in range(50):
        model = LiNet(cfg, seed=seed)
        model.load_snapshot({k: v + rng.uniform(-0.3, 0.3, size=v.shape) for k, v in base.items()})
        out, trace = model.forward(batch)
        if kink_margin(mse(out, target)) > KINK_MARGIN:
            break
    masks = trace.masks
    names = list(model.params)

    def loss(*ps):
        model.params = dict(zip(names, ps))
        out, _ = model.forward(batch, frozen_masks=masks)
        return mse(out, target)

    return grad_check(loss, [model.params[n] for n in names], name=f"model[{block}] seed={seed}",
                      max_coords=max_coords, seed=seed)


def run_gradchecks(seed: int = 0, scopes=SCOPES, max_coords: int | None = None) -> list[GradCheckReport]:
    unknown = set(scopes) - set(SCOPES)
    if unknown:
        raise ConfigError(f"unknown gradcheck scope(s) {sorted(unknown)}; choose from {SCOPES}")
    rng = np.random.default_rng(seed)
    reports = []
    if "op" in scopes:
        reports += [grad_check(f, xs, name=f"op:{n}") for n, f, xs in op_checks(rng)]
    if "module" in scopes:
        reports += [grad_check(f, xs, name=f"module:{n}") for n, f, xs in module_checks(rng)]
    if "model" in scopes:
        reports += [model_check(b, seed, max_coords) for b in ("mlp", "transformer")]
    return reports


@dataclass
class BenchRow:
    lookback: int
    time_compression: int
    batch_size: int
    forward_backward_seconds: float
    peak_live_bytes: int
    gate_elements: int
    dense_elements: int

    @property
    def ratio(self) -> float:
        return self.gate_elements / self.dense_elements


def live_bytes(loss: Tensor) -> int:
    """Bytes held by every tensor in the graph plus any gradient buffers."""
    total = 0
    for node in tn.graph_nodes(loss):
        total += node.data.nbytes
        if node.grad is not None:
            total += node.grad.nbytes
    return total


def bench(base: ModelConfig, sizes=(128, 256, 512), batch_size: int = 1, repeats: int = 3,
          seed: int = 0) -> list[BenchRow]:
    rows = []
    for T in sizes:
        cfg = ModelConfig.from_dict({**base.to_dict(), "lookback": int(T), "mlp3_hidden": None})
        model = LiNet(cfg, seed=seed)
        batch = random_batch(cfg, batch_size, np.random.default_rng(seed))
        times, peak = [], 0
        for _ in range(repeats):
            model.zero_grad()
            t0 = time.perf_counter()
            out, _ = model.forward(batch)
            loss = mse(out, Tensor(batch.y.astype(cfg.np_dtype)))
            loss.backward()
            times.append(time.perf_counter() - t0)
            peak = max(peak, live_bytes(loss))
        counts = gate_element_counts(cfg, batch_size)
        rows.append(BenchRow(T, cfg.time_compression, batch_size, float(np.median(times)), peak,
                             counts["gate"], counts["dense"]))
    return rows
