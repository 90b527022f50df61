import os

import numpy as np
import pytest

from marginnet.data import MNIST_FILES

MNIST_CANDIDATES = [os.environ.get("MNIST_DIR"), "/root/data/mnist",
                    os.path.join(os.path.dirname(__file__), "..", "data", "mnist")]


def find_mnist():
    for d in MNIST_CANDIDATES:
        if d and all(os.path.exists(os.path.join(d, f)) for pair in MNIST_FILES.values() for f in pair):
            return d
    return None


@pytest.fixture(scope="session")
def mnist_dir():
    d = find_mnist()
    if d is None:
        pytest.skip("MNIST IDX files not found; set MNIST_DIR")
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
