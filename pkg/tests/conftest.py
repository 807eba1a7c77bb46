import numpy as np
import pytest

from linet.data import WindowBatch
from linet.model import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(channels=4, lookback=8, horizon=4, d_embed=4, dtype="float64")


def make_batch(cfg: ModelConfig, batch_size: int = 2, seed: int = 0) -> WindowBatch:
    from linet.diagnostics import random_batch
    return random_batch(cfg, batch_size, np.random.default_rng(seed))


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
