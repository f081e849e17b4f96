"""Shared fixtures: tiny configs, tiny datasets, and the --runslow switch."""

import numpy as np
import pytest
import torch

from irwgan.config import ExperimentConfig, NetworkConfig
from irwgan.core import DomainDataset


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _float64_default():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


def micro_network() -> NetworkConfig:
    """Smallest networks that still exercise every layer type at 8x8"""
    return NetworkConfig(
        gen_filters=2,
        gen_blocks=1,
        gen_downsamples=1,
        disc_filters=2,
        disc_heads=(1, 2),
        beta_resolution=8,
        beta_filters=2,
        beta_layers=1,
        beta_hidden=4,
    )


def micro_config(**updates) -> ExperimentConfig:
    base = dict(
        resolution=8,
        channels=1,
        network=micro_network(),
        batch_size=4,
        micro_batch=4,
        epochs=2,
        decay_start_epoch=1,
        iters_per_epoch=2,
        checkpoint_every=1,
        sample_grid_every=0,
        eval_chunk=8,
        seed=3,
    )
    base.update(updates)
    return ExperimentConfig(**base)


def random_domain(name: str, n: int, seed: int, res: int = 8, labeled: bool = True) -> DomainDataset:
    rng = np.random.default_rng(seed)
    samples = rng.uniform(-1.0, 1.0, size=(n, res, res, 1))
    labels = (np.arange(n) % 3 != 0) if labeled else None
    return DomainDataset(samples=samples, name=name, labels=labels)


@pytest.fixture
def tiny_pair():
    return random_domain("X", 10, seed=1), random_domain("Y", 9, seed=2)


# grad_check settings for conv networks: small step, ReLU-kink coordinates skipped
KINKED = dict(h=1e-6, max_coords=30, abs_floor=1e-4, kink_rtol=1e-4)
