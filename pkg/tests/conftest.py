import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repo", max_examples=40, deadline=None)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand_frame(rng, h, w):
    return rng.random((h, w, 3)).astype(np.float32)
