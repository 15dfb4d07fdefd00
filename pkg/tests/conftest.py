import numpy as np
import pytest
import torch

from aasgan.models import DecoderConfig, EncoderConfig, PoolConfig
from aasgan.synth import SynthConfig, generate_synthetic_dataset
from aasgan.training import TrainConfig

TINY = dict(embed_dim=3, hidden_dim=6, noise_dim=2, pool_dim=4, pool_embed_dim=3, pool_out_dim=4, d_mlp_dim=4)


@pytest.fixture
def tiny_dims():
    enc = EncoderConfig(TINY["embed_dim"], TINY["hidden_dim"])
    pool = PoolConfig(TINY["pool_embed_dim"], TINY["pool_out_dim"])
    dec = DecoderConfig(TINY["embed_dim"], TINY["hidden_dim"], TINY["noise_dim"], TINY["pool_dim"])
    return enc, pool, dec


@pytest.fixture
def toy_real():
    return generate_synthetic_dataset(SynthConfig(n_scenes=24, peds_per_scene=(1, 3), jitter_std=0.05, seed=11))


@pytest.fixture
def toy_synth():
    return generate_synthetic_dataset(SynthConfig(n_scenes=24, peds_per_scene=(1, 3), seed=12))


@pytest.fixture
def small_cfg():
    def make(**kw):
        base = dict(TINY, batch_size=4, steps=10, seed=3)
        base.update(kw)
        return TrainConfig(**base)
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    name = marker.args[0]
    passed = call.excinfo is None
    _CRITERIA[name] = _CRITERIA.get(name, True) and passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in _CRITERIA.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
