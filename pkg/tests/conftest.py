import numpy as np
import pytest

from looplearn.model import ArchConfig, DescriptorModel


@pytest.fixture
def tiny_arch():
    return ArchConfig(input_shape=(3, 8, 8), conv_channels=(4,), kernel_size=3,
                      hidden_dim=24, descriptor_dim=16, gem_p=1.0)


@pytest.fixture
def tiny_model(tiny_arch):
    return DescriptorModel(tiny_arch, rng=np.random.default_rng(7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
