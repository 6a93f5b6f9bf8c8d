import os
from pathlib import Path

import numpy as np
import pytest

from dataset_obfuscation import data, rng

MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")


def mnist_dir():
    """Directory holding the raw MNIST training pair, or None."""
    candidates = []
    if os.environ.get("DSOBF_DATA_DIR"):
        candidates.append(Path(os.environ["DSOBF_DATA_DIR"]) / "mnist")
    candidates.append(Path("/root/data/mnist"))
    for d in candidates:
        if all((d / f).is_file() for f in MNIST_FILES):
            return d
    return None


@pytest.fixture(scope="session")
def mnist_path():
    d = mnist_dir()
    if d is None:
        pytest.skip("MNIST not found; set DSOBF_DATA_DIR to a directory containing mnist/")
    return d


@pytest.fixture(scope="session")
def mnist(mnist_path):
    return data.load_mnist(mnist_path)


def balanced_pool(n_per_label=100, num_classes=10, dim=4, seed=0):
    labels = np.repeat(np.arange(num_classes), n_per_label)
    feats = rng.derive_stream(seed, "pool").uniform(len(labels) * dim).reshape(len(labels), dim)
    return data.Dataset(feats, labels, num_classes)


@pytest.fixture
def blobs():
    return data.synth_blobs(2, 500, 4, 0.05, rng.derive_stream(0, "blobs"))
