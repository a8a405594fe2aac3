import functools

import numpy as np
import pytest
from hypothesis import settings

from afieti import driver

settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")


@functools.lru_cache(maxsize=None)
def cached_system(name, p=2, n_el=4, n_patch=None):
    prob = driver.preset(name, p=p, n_el=n_el, n_patch=n_patch)
    return prob, driver.build_system(prob)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
