"""
Shared fixtures for the FedIN test suite
"""
import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

import config
from core.datasets import synth_blobs, train_test_split
from core.split_model import build_arch, build_model
from harness.experiment_config import config_from_dict


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_blobs():
    """600 samples of 4 classes in 8 dimensions, split 500 / 100"""
    full = synth_blobs(600, 4, 8, 1.0, seed=7)
    return train_test_split(full, 100, seed=7)


@pytest.fixture
def tiny_arch_kwargs():
    return dict(kind="mlp", feature_dim_in=6, feature_dim_out=5, hidden_dim=7)


@pytest.fixture
def make_model(tiny_arch_kwargs):
    """Factory for small MLP split models"""
    def factory(variant="A", input_dim=8, num_classes=4, seed=0, dtype=np.float32):
        arch = build_arch(variant, (input_dim,), num_classes, **tiny_arch_kwargs)
        return build_model(arch, seed, dtype=dtype)
    return factory


@pytest.fixture
def tiny_config():
    """Factory for fast synthetic experiment configs"""
    def factory(**overrides):
        data = {
            "mode": config.MODE_FEDIN,
            "dataset": {"kind": "synth", "num_samples": 300, "test_samples": 100,
                        "num_classes": 4, "dim": 8},
            "model": {"feature_dim_in": 6, "feature_dim_out": 5, "hidden_dim": 6},
            "partition": {"kind": "dirichlet", "num_clients": 4, "alpha": 0.5},
            "num_rounds": 2,
            "batch_size": 32,
            "sample_size": 64,
            "store_capacity": 128,
            "upload_cap": 64,
            "seed": 3,
        }
        data.update(overrides)
        return config_from_dict(data)
    return factory
