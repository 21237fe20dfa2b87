import numpy as np
import pytest

from spikeattack.harness.datasets import make_bars, make_blobs
from spikeattack.harness.train import TrainConfig, train_minimal
from spikeattack.snn import Dense, Flatten, Lif, LifParams, NetworkModel, OutputHead


@pytest.fixture(scope="session")
def blob_victim():
    """Conv LIF net on the 8x8 two-class blobs, plus its held-out split."""
    ds = make_blobs(800, seed=0)
    train, test = ds.split(600)
    res = train_minimal("conv", train, TrainConfig(epochs=15, seed=0, timesteps=4), test)
    return res, test


@pytest.fixture(scope="session")
def bars_victim():
    """Conv LIF net on binary moving-bar frames (T=5, 2x16x16)."""
    ds = make_bars(500, T=5, seed=0)
    train, test = ds.split(350)
    res = train_minimal("conv", train, TrainConfig(epochs=10, seed=0), test)
    return res, test


def tiny_dense(seed, n_in=9, hidden=6, classes=2, T=2, dtype=np.float32, scale=1.5):
    """A small random dense LIF net on (1, 3, 3) inputs."""
    rng = np.random.default_rng(seed)
    w1 = (rng.standard_normal((hidden, n_in)) * scale).astype(dtype)
    b1 = (rng.standard_normal(hidden) * 0.5).astype(dtype)
    w2 = rng.standard_normal((classes, hidden)).astype(dtype)
    b2 = (rng.standard_normal(classes) * 0.3).astype(dtype)
    side = int(round(np.sqrt(n_in)))
    layers = [Flatten(), Dense(w1, b1), Lif(), OutputHead(w2, b2)]
    return NetworkModel(layers, (1, side, side), T, LifParams())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_REPORT = []


def report_line(line):
    """Record an acceptance line; printed now (with -s) and in the terminal summary."""
    _REPORT.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
