import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def observed_order(coarse_err, fine_err, refinement=2.0):
    """Convergence order implied by errors at two resolutions."""
    if fine_err == 0:
        return np.inf
    return np.log(coarse_err / fine_err) / np.log(refinement)
