"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, graph_nodes, no_grad

KINKED_OPS = ("relu", "abs")


@dataclass
class GradCheckReport:
    name: str
    max_rel_err: float
    worst_index: tuple | None
    tol: float
    n_coords: int
    nan_at: tuple | None = None
    per_input: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.nan_at is None and self.max_rel_err <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" nan_at={self.nan_at}" if self.nan_at is not None else ""
        return f"{status} {self.name}: max_rel_err={self.max_rel_err:.3e} (tol {self.tol:.0e}, {self.n_coords} coords){extra}"


def kink_margin(root: Tensor) -> float:
    """Smallest |input| over every relu/abs node in the graph (inf when none)."""
    margins = [float(np.abs(n._parents[0].data).min()) for n in graph_nodes(root)
               if n.op in KINKED_OPS and n._parents]
    return min(margins, default=float("inf"))


def _rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor] | Tensor,
    step: float = 1e-5,
    tol: float = 1e-4,
    name: str = "f",
    floor: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backward() against (f(x+h) - f(x-h)) / 2h coordinate by coordinate.

    ``f`` is called with the input tensors and must return a scalar Tensor.
    Relative error uses max(|a|, |n|, floor) as denominator so coordinates
    with vanishing gradient do not blow up the ratio. When ``max_coords`` is
    set, that many coordinates per input are sampled instead of all.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for x in inputs:
        x.data = np.array(x.data, copy=True, order="C")
        x.requires_grad = True
        x.zero_grad()
    loss = f(*inputs)
    if not np.all(np.isfinite(loss.data)):
        return GradCheckReport(name, float("nan"), None, tol, 0, nan_at=("loss",))
    loss.backward()

    rng = np.random.default_rng(seed)
    worst, worst_at, count = 0.0, None, 0
    per_input = {}
    for i, x in enumerate(inputs):
        analytic = x.grad.copy()
        nan_idx = np.argwhere(~np.isfinite(analytic))
        if len(nan_idx):
            return GradCheckReport(name, float("nan"), None, tol, count, nan_at=(i, *nan_idx[0]))
        flat = x.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        input_worst = 0.0
        for j in coords:
            orig = flat[j]
            with no_grad():
                flat[j] = orig + step
                fp = float(f(*inputs).data)
                flat[j] = orig - step
                fm = float(f(*inputs).data)
            flat[j] = orig
            numeric = (fp - fm) / (2 * step)
            if not np.isfinite(numeric):
                return GradCheckReport(name, float("nan"), None, tol, count,
                                       nan_at=(i, *np.unravel_index(j, x.shape)))
            err = float(_rel_err(analytic.reshape(-1)[j], numeric, floor))
            count += 1
            input_worst = max(input_worst, err)
            if err > worst:
                worst, worst_at = err, (i, *np.unravel_index(j, x.shape))
        per_input[x.name or f"input{i}"] = input_worst
    return GradCheckReport(name, worst, worst_at, tol, count, per_input=per_input)
