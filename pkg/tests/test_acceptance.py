"""Acceptance criteria 1-9, one PASS/FAIL line each.

The lines are printed as each test runs and repeated in the pytest terminal
summary. Criteria 5 and 6 need the ETTm2 CSV: point ``LINET_ETTM2`` at it or
place it at ``data/ETTm2.csv``. Without it those criteria fail and say why.
"""

from __future__ import annotations

import math
import os
import time
from decimal import Decimal, localcontext
from pathlib import Path

import numpy as np
import pytest

from linet import tensor as tn
from linet.checkpoint import load_checkpoint, save_checkpoint
from linet.data import Normalizer, SplitSpec, chronological_split, synthetic_series, window_set
from linet.diagnostics import run_gradchecks
from linet.embedding import PairBatch, cosent_loss
from linet.gate import GateConfig, retention_to_k, topk_softmax, topk_softmax_backward
from linet.harness import REFERENCE, ExperimentConfig, emit_report, read_reports, run_experiment
from linet.model import LiNet, ModelConfig, model_bytes
from linet.optim import OptimizerState, adamw_step
from linet.tensor import Tensor
from linet.training import TrainConfig, fit_batch

from conftest import ACCEPTANCE_LINES, make_batch

ROOT = Path(__file__).resolve().parents[1]


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def note(text: str) -> None:
    ACCEPTANCE_LINES.append(f"     {text}")
    print(text)


def ettm2_path() -> Path | None:
    env = os.environ.get("LINET_ETTM2")
    for p in ([Path(env)] if env else []) + [ROOT / "data" / "ETTm2.csv"]:
        if p.is_file():
            return p
    return None


def pair_vectors(cos_a: float, cos_b: float):
    """Anchor e1 plus two unit vectors at the given cosines to it."""
    unit = lambda c: Tensor([c, math.sqrt(1 - c * c)])  # noqa: E731
    return [Tensor([1.0, 0.0]), unit(cos_a), unit(cos_b)]


# -- 1 -----------------------------------------------------------------------------

def test_criterion_1_gate_suite():
    rng = np.random.default_rng(2024)
    lengths, retentions = (3, 7, 48, 96), (0.1, 0.3, 0.5, 0.7, 0.9, 1.0)
    problems = []
    t0 = time.perf_counter()
    for i in range(1000):
        n, r = lengths[i % 4], retentions[(i // 4) % 6]
        z = rng.normal(scale=rng.uniform(0.1, 10.0), size=n)
        out = topk_softmax(Tensor(z), GateConfig(r))
        w, m, k = out.weights.data, out.mask, retention_to_k(r, n)
        shift = rng.uniform(-50, 50)
        moved = topk_softmax(Tensor(z + shift), GateConfig(r))
        checks = {
            "nonnegative": bool(np.all(w >= 0)),
            "sum": abs(w[m].sum() - 1.0) <= 1e-6,
            "count": np.count_nonzero(w) <= k and m.sum() == k,
            "dominance": m.all() or z[m].min() >= z[~m].max(),
            "shift mask": np.array_equal(moved.mask, m),
            "shift weights": np.max(np.abs(moved.weights.data - w)) <= 1e-12,
        }
        if r == 1.0:
            checks["dense"] = np.max(np.abs(w - tn.softmax_axis(Tensor(z)).data)) <= 1e-12
        problems += [f"vector {i} (n={n}, r={r}): {name}" for name, ok in checks.items() if not ok]
    seconds = time.perf_counter() - t0
    ok = not problems and seconds < 10.0
    verdict(1, ok, f"1000 gate vectors, {len(problems)} violations, {seconds:.2f}s (limit 10s)"
            + (f"; first: {problems[0]}" if problems else ""))


# -- 2 -----------------------------------------------------------------------------

def test_criterion_2_gradient_oracle():
    t0 = time.perf_counter()
    reports = run_gradchecks(seed=0)
    seconds = time.perf_counter() - t0
    failed = [r for r in reports if not r.passed]
    for r in failed:
        note(r.line())
    worst = max(reports, key=lambda r: r.max_rel_err)
    verdict(2, not failed and seconds < 60.0,
            f"{len(reports) - len(failed)}/{len(reports)} gradient checks within rel err 1e-4 "
            f"(worst {worst.name} {worst.max_rel_err:.2e}), {seconds:.1f}s (limit 60s)")


# -- 3 -----------------------------------------------------------------------------

def test_criterion_3_goldens():
    results = []

    gate = topk_softmax(Tensor([3.0, 1.0, 2.0]), GateConfig(2 / 3))
    got = gate.weights.data
    results.append(("topk_softmax([3,1,2], k=2)", np.max(np.abs(got - [0.73106, 0.0, 0.26894])) <= 1e-5,
                    np.array2string(got, precision=6)))

    grad = topk_softmax_backward(np.array([1.0, 0.0, 0.0]), gate)
    results.append(("backward row", np.max(np.abs(grad - [0.19661, 0.0, -0.19661])) <= 1e-5,
                    np.array2string(grad, precision=6)))

    low = cosent_loss(PairBatch(pair_vectors(0.9, 0.1), [(0, 1)], [(0, 2)], lam=20.0)).data.item()
    # the 1.1254e-7 literal carries five digits: it must match there, and the direct evaluation to 1e-6
    exact = math.log1p(math.exp(-16.0))
    results.append(("cosent pos 0.9 / neg 0.1", float(f"{low:.4e}") == 1.1254e-7 and
                    abs(low - exact) / exact <= 1e-6, f"{low:.6e}"))
    high = cosent_loss(PairBatch(pair_vectors(0.1, 0.9), [(0, 1)], [(0, 2)], lam=20.0)).data.item()
    results.append(("cosent pos 0.1 / neg 0.9", abs(high - 16.0000001) / 16.0000001 <= 1e-6, f"{high:.9f}"))

    params = {"w": np.zeros(1)}
    adamw_step(params, {"w": np.ones(1)}, OptimizerState(), lr=1e-3, weight_decay=0.0)
    delta = params["w"][0]
    with localcontext() as ctx:
        ctx.prec = 40
        rule = -Decimal("1e-3") / (Decimal(1) + Decimal("1e-8"))
    target = -9.99999995e-4
    results.append(("first AdamW step", abs(delta - target) <= 1e-12,
                    f"{delta:.12e} vs target {target:.9e} (gap {abs(delta - target):.1e}); "
                    f"exact value of the update rule {float(rule):.12e} (gap {abs(Decimal(delta) - rule):.1e})"))

    for name, ok, shown in results:
        note(f"{'ok  ' if ok else 'MISS'} {name}: {shown}")
    misses = [name for name, ok, _ in results if not ok]
    verdict(3, not misses, f"{len(results) - len(misses)}/{len(results)} goldens within tolerance"
            + (f"; missed: {', '.join(misses)}" if misses else ""))


# -- 4 -----------------------------------------------------------------------------

def overfit(seed: int) -> tuple[float, float]:
    series = synthetic_series()  # 400 hourly steps, 3 channels
    windows = window_set(series, Normalizer.fit(series), 32, 8, stride=24)
    assert len(windows) == 16
    batch = windows.batch(np.arange(16))
    model = LiNet(ModelConfig(channels=3, lookback=32, horizon=8), seed=seed)
    initial = fit_batch(model, batch, 500, TrainConfig())[0]
    final = float(np.mean((model.predict(batch) - batch.y) ** 2))
    return initial, final


def test_criterion_4_overfit():
    t0 = time.perf_counter()
    initial, final = overfit(seed=0)
    seconds = time.perf_counter() - t0
    ratio = final / initial
    verdict(4, ratio < 0.01 and seconds < 60.0,
            f"default model, seed 0: train MSE {initial:.4f} -> {final:.5f} ({100 * ratio:.2f}% of step 0, "
            f"limit 1%), {seconds:.1f}s (limit 60s)")


@pytest.mark.slow
def test_overfit_other_seeds_informational():
    for seed in range(1, 6):
        initial, final = overfit(seed)
        note(f"info criterion 4, seed {seed}: {100 * final / initial:.2f}% of step-0 MSE")


# -- 5 and 6 -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def ettm2_runs(tmp_path_factory):
    path = ettm2_path()
    if path is None:
        return None
    out = tmp_path_factory.mktemp("ettm2")
    runs = {}
    for variant in ("full", "mlp3"):
        cfg = ExperimentConfig(dataset=str(path), horizon=96, lookback=96, variant=variant, out=str(out))
        t0 = time.perf_counter()
        runs[variant] = (run_experiment(cfg).report, time.perf_counter() - t0)
        emit_report(runs[variant][0], out / "acceptance.jsonl")
    return runs


MISSING = ("ETTm2.csv not found (set LINET_ETTM2 or place it at data/ETTm2.csv); "
           "the desk-scale run cannot be performed")


@pytest.mark.slow
def test_criterion_5_ettm2_beats_persistence(ettm2_runs):
    if ettm2_runs is None:
        verdict(5, False, MISSING)
    report, seconds = ettm2_runs["full"]
    paper_mae, paper_mse = REFERENCE[("ettm2", 96, "full")]
    soft = "pass" if report.mse <= 0.23 else "warn"
    note(f"published Li-Net MAE {paper_mae} / MSE {paper_mse}; achieved MAE {report.mae:.4f} / MSE {report.mse:.4f}")
    note(f"soft target MSE <= 0.23: {soft}")
    verdict(5, report.mse < report.persistence_mse and seconds < 900,
            f"test MSE {report.mse:.4f} vs persistence {report.persistence_mse:.4f} "
            f"(stride {report.stride}, {report.train_windows} train windows), {seconds:.0f}s (limit 900s)")


def test_criterion_6_ablation_separation(ettm2_runs, tmp_path):
    # dense-gate equivalence is data independent: train both configurations from one seed
    base = ExperimentConfig(synthetic_steps=1000, max_epochs=2, dtype="float64", out=str(tmp_path))
    soft = run_experiment(base.replace(variant="softmax"), keep_forecasts=True)
    full = run_experiment(base.replace(time_retention=1.0, channel_retention=1.0), keep_forecasts=True)
    same_params = all(np.array_equal(soft.model.params[k].data, full.model.params[k].data)
                      for k in soft.model.params)
    bitwise = same_params and np.array_equal(soft.test.forecasts, full.test.forecasts)
    note(f"softmax variant vs full at retention 1.0 after training: "
         f"{'bitwise identical' if bitwise else 'DIFFERENT'} parameters and forecasts")
    if ettm2_runs is None:
        verdict(6, False, MISSING + f"; dense-gate equivalence {'holds' if bitwise else 'FAILS'}")
    full_mse, mlp_mse = ettm2_runs["full"][0].mse, ettm2_runs["mlp3"][0].mse
    verdict(6, full_mse < mlp_mse and bitwise,
            f"ETTm2 test MSE full {full_mse:.4f} vs mlp3 {mlp_mse:.4f} (published 0.1131 vs 0.4847); "
            f"dense-gate equivalence {'holds' if bitwise else 'FAILS'}")


@pytest.mark.slow
def test_surrogate_desk_run_informational():
    """Same protocol on a synthetic series; not a substitute for criteria 5 and 6."""
    series = synthetic_series(2000, 3, seed=0)
    for variant in ("full", "mlp3"):
        exp = run_experiment(ExperimentConfig(variant=variant), series)
        r = exp.report
        note(f"info synthetic surrogate, {variant}: test MSE {r.mse:.4f} vs persistence {r.persistence_mse:.4f}")
        if variant == "full":
            assert r.mse < r.persistence_mse


# -- 7 -----------------------------------------------------------------------------

def test_criterion_7_size_and_gate_elements():
    ett = ModelConfig(channels=7, lookback=96, horizon=96)
    size = model_bytes(ett, 4)
    counts = []
    for T in (128, 256, 512):
        cfg = ModelConfig(channels=7, lookback=T, horizon=96, dtype="float64")
        B = 2
        _, trace = LiNet(cfg).forward(make_batch(cfg, B))
        measured = trace.T_te.data.size
        counts.append((T, measured, B * T * (T // cfg.time_compression), B * T * T))
    for T, measured, want, dense in counts:
        note(f"T={T}: time-gate elements {measured} (B*T*T/L_T = {want}), dense map {dense}, "
             f"reduction x{dense / measured:g}")
    ok = size < 2 * 1024 * 1024 and all(m == w for _, m, w, _ in counts)
    verdict(7, ok, f"default ETT model {size} bytes ({size / 1024:.1f} KiB, limit 2 MiB); "
            f"gate counts match B*T*(T/L_T) for T in 128/256/512")


# -- 8 -----------------------------------------------------------------------------

def test_criterion_8_protocol(tmp_path):
    series = synthetic_series(100)
    lengths = tuple(len(s) for s in chronological_split(series, SplitSpec()))
    cfg = ExperimentConfig(synthetic_steps=300, lookback=16, horizon=4, out=str(tmp_path))
    emit_report(run_experiment(cfg).report, tmp_path / "report.jsonl")
    echo = read_reports(tmp_path / "report.jsonl")[0]["config"]
    emitted = (echo["batch_size"], echo["max_epochs"], echo["patience"])
    nested = (echo["train"]["batch_size"], echo["train"]["max_epochs"], echo["train"]["patience"])
    verdict(8, lengths == (60, 20, 20) and emitted == nested == (16, 10, 3),
            f"split of 100 steps -> {lengths}; emitted config echo batch/epochs/patience = {emitted}")


# -- 9 -----------------------------------------------------------------------------

def test_criterion_9_checkpoint(tmp_path):
    identical = []
    for cfg in (ModelConfig(channels=7, lookback=96, horizon=96),
                ModelConfig(channels=4, lookback=8, horizon=4, block="transformer", tf_heads=2, dtype="float64")):
        model = LiNet(cfg, seed=13)
        batch = make_batch(cfg, 4, seed=21)
        before = model.predict(batch)
        back = load_checkpoint(save_checkpoint(model, tmp_path / f"{cfg.block}.linet"))
        identical.append(np.array_equal(before, back.predict(batch)) and before.dtype == back.predict(batch).dtype)
    verdict(9, all(identical), f"save -> load -> forward bitwise identical for "
            f"{sum(identical)}/{len(identical)} models (float32 mlp, float64 transformer)")
