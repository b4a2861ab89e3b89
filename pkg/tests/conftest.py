import numpy as np
import pytest

from emsynth.corpus import make_corpus, reference_paths
from emsynth.device import EmissionConfig
from emsynth.isa import calibration_catalog, default_catalog


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def paths(catalog):
    return reference_paths(catalog)


@pytest.fixture(scope="session")
def cal_paths():
    return reference_paths(calibration_catalog())


@pytest.fixture(scope="session")
def config():
    return EmissionConfig()


@pytest.fixture(scope="session")
def small_corpus(config):
    """Enough traces for a 10-fold plan with 20 per benign test chunk."""
    return make_corpus(config, n=200, library_examples=100, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
