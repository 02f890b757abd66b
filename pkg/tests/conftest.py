import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def sorted_rows(x, decimals=None):
    # rounding first keeps float ties from reordering rows
    x = np.asarray(x) if decimals is None else np.round(x, decimals)
    return x[np.lexsort(x.T[::-1])]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
