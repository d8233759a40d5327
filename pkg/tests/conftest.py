"""Shared instance factories for the test suite."""

import numpy as np
import pytest

from src.core.tensor import NamedTensor
from src.mamba.fixtures import tiny_random_model, tiny_trained_model
from src.mamba.layer import MambaLayer, SelectiveInputs


def build_layer(d: int, n: int, seed: int = 0, d_model: int = None, dt_rank: int = 2,
                d_conv: int = 2, index: int = 0, a_log=None) -> MambaLayer:
    """Random MambaLayer with D=d, N=n; a_log defaults to U[0, 1.5)."""
    rng = np.random.default_rng(seed)
    d_model = d if d_model is None else d_model
    p = f"layers.{index}"
    if a_log is None:
        a_log = rng.uniform(0.0, 1.5, size=(d, n))
    return MambaLayer(
        index=index,
        in_proj=NamedTensor(f"{p}.in_proj.weight", rng.normal(0.0, d_model ** -0.5, size=(2 * d, d_model))),
        conv_weight=NamedTensor(f"{p}.conv1d.weight", rng.uniform(-0.5, 0.5, size=(d, d_conv))),
        conv_bias=NamedTensor(f"{p}.conv1d.bias", rng.uniform(-0.1, 0.1, size=d)),
        x_proj=NamedTensor(f"{p}.x_proj.weight", rng.normal(0.0, d ** -0.5, size=(dt_rank + 2 * n, d))),
        dt_proj=NamedTensor(f"{p}.dt_proj.weight", rng.uniform(-0.5, 0.5, size=(d, dt_rank))),
        dt_bias=NamedTensor(f"{p}.dt_proj.bias", rng.uniform(-3.0, -1.0, size=d)),
        out_proj=NamedTensor(f"{p}.out_proj.weight", rng.normal(0.0, d ** -0.5, size=(d_model, d))),
        a_log=NamedTensor(f"{p}.ssm.A_log", np.asarray(a_log, dtype=np.float64)),
        d_skip=NamedTensor(f"{p}.ssm.D", rng.normal(0.0, 1.0, size=d)),
    )


def build_theta(d: int, n: int, batch: int = 4, length: int = 8, seed: int = 0,
                delta_range=(0.05, 0.3)) -> SelectiveInputs:
    """θ with per-channel x scales and per-state B scales drawn log-uniform on [0.1, 10]."""
    rng = np.random.default_rng(seed + 10_000)
    x_scale = np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=d))
    b_scale = np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=n))
    x = rng.normal(0.0, 1.0, size=(batch, length, d)) * x_scale
    b = rng.normal(0.0, 1.0, size=(batch, length, n)) * b_scale
    c = rng.normal(0.0, 1.0, size=(batch, length, n))
    delta = rng.uniform(*delta_range, size=(batch, length, d))
    return SelectiveInputs(x=x, delta=delta, b=b, c=c)


def random_spd(k: int, seed: int = 0, cols: int = None) -> np.ndarray:
    """X Xᵀ for anisotropic, correlated inputs X (k×cols)."""
    rng = np.random.default_rng(seed)
    cols = 4 * k if cols is None else cols
    mix = rng.normal(0.0, 1.0, size=(k, k)) * np.exp(rng.uniform(-1.0, 1.0, size=k))
    x = mix @ rng.normal(0.0, 1.0, size=(k, cols))
    return x @ x.T


@pytest.fixture(scope="session")
def layer_factory():
    return build_layer


@pytest.fixture(scope="session")
def theta_factory():
    return build_theta


@pytest.fixture(scope="session")
def spd_factory():
    return random_spd


@pytest.fixture(scope="session")
def random_model():
    return tiny_random_model(0)


@pytest.fixture(scope="session")
def trained_model():
    return tiny_trained_model(0)


@pytest.fixture(autouse=True)
def _single_thread(monkeypatch):
    monkeypatch.delenv("SSM_SURGEON_THREADS", raising=False)
