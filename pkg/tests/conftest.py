import numpy as np
import pytest

from vcsr.synthesizer import SynthesizerConfig, Synthesizer, model_param_specs
from vcsr.keypoints import KeypointDetector
from vcsr.weights import random_init


@pytest.fixture(scope="session")
def store256():
    return random_init(model_param_specs(SynthesizerConfig(256)), seed=1234)


@pytest.fixture(scope="session")
def model256(store256):
    return Synthesizer.from_store(store256, SynthesizerConfig(256))


@pytest.fixture(scope="session")
def detector256(store256):
    return KeypointDetector.from_store(store256)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
