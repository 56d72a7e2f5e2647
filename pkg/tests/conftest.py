import numpy as np
import pytest

from twinenc import ModelConfig, TwinModel


@pytest.fixture(scope="session")
def tiny_config():
    """Minimal architecture for fast unit tests."""
    return ModelConfig(
        n_layers=1, hidden_size=16, n_heads=2, vocab_buckets=256, max_len=6, dropout=0.0
    )


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    return TwinModel.initialize(tiny_config, seed=0)


@pytest.fixture(scope="session")
def desk_model():
    return TwinModel.initialize(ModelConfig(dropout=0.0), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
