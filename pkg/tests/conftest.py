import numpy as np
import pytest

from panelforge import Pool


@pytest.fixture(scope="session")
def pool1():
    with Pool(1) as p:
        yield p


@pytest.fixture(scope="session")
def pool2():
    with Pool(2) as p:
        yield p


@pytest.fixture(scope="session")
def pool4():
    with Pool(4) as p:
        yield p


def bitwise_equal(a: np.ndarray, b: np.ndarray) -> bool:
    """Strict bitwise comparison (distinguishes signed zeros, unlike ==)."""
    return a.shape == b.shape and a.tobytes() == b.tobytes()
