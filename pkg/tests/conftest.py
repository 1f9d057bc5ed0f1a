import numpy as np
import pytest

from cycleseg.crm import CRMConfig
from cycleseg.layers import EncoderConfig
from cycleseg.model import CycleSegNet
from cycleseg.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_encoder():
    return EncoderConfig(channels=(4, 8), in_channels=3)


@pytest.fixture
def tiny_model(tiny_encoder):
    return CycleSegNet.init(tiny_encoder, levels=1, seed=3, zero_head=False)


@pytest.fixture
def tiny_crm():
    return CRMConfig(steps=2)


@pytest.fixture
def image_pair(rng):
    return [Tensor(rng.uniform(size=(1, 3, 16, 16))) for _ in range(2)]
