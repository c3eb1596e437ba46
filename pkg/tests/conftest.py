import os
from pathlib import Path

import numpy as np
import pytest

MNIST_DIR = Path(os.environ.get("NCGSNN_MNIST_DIR", "/root/data/mnist"))


def mnist_available() -> bool:
    return (MNIST_DIR / "train-images-idx3-ubyte").exists() or (
        MNIST_DIR / "train-images-idx3-ubyte.gz").exists()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def mnist_dir():
    if not mnist_available():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set NCGSNN_MNIST_DIR)")
    return MNIST_DIR
