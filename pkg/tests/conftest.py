import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sitta.model import ModelConfig, SittaModel

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def tiny_model():
    return SittaModel(ModelConfig(d_t=4, base_channels=4, n_res=1, seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
