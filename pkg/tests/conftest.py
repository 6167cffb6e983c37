import numpy as np
import pytest
from hypothesis import settings

from pqcomp.data import gen_synthetic

settings.register_profile("pqcomp", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("pqcomp")


@pytest.fixture(scope="session")
def tiny_blobs():
    """Ten well-separated classes of 8x8 images; trains in a second or two."""
    return gen_synthetic(seed=3, n_per_class=12, classes=10, image_size=8, noise=0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
