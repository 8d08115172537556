import os

os.environ.setdefault("EVOSYNTH_PROGRESS", "0")

import numpy as np
import pytest

from evosynth.constants import (
    MNIST_TEST_IMAGES_PATH,
    MNIST_TEST_LABELS_PATH,
    MNIST_TRAIN_IMAGES_PATH,
    MNIST_TRAIN_LABELS_PATH,
)
from evosynth.evolution.data import Dataset
from evosynth.evolution.network import ArchConfig, build_network
from tests.utils import TINY_ARCHITECTURE, TINY_INPUT_SHAPE, make_blobs

MNIST_FILES = [
    MNIST_TRAIN_IMAGES_PATH,
    MNIST_TRAIN_LABELS_PATH,
    MNIST_TEST_IMAGES_PATH,
    MNIST_TEST_LABELS_PATH,
]


def pytest_collection_modifyitems(config, items):
    if all(os.path.exists(path) for path in MNIST_FILES):
        return
    skip = pytest.mark.skip(reason="MNIST IDX files not found under EVOSYNTH_DATA_DIR")
    for item in items:
        if "mnist" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_arch():
    return ArchConfig(layers=TINY_ARCHITECTURE, input_shape=TINY_INPUT_SHAPE)


@pytest.fixture
def tiny_net(tiny_arch):
    return build_network(tiny_arch, seed=7)


def _blob_dataset(n, seed, split):
    pixels, labels = make_blobs(n, seed)
    return Dataset(
        images=pixels[:, None].astype(np.float64) / 255.0,
        labels=labels.astype(np.int64),
        split=split,
    )


@pytest.fixture
def tiny_train():
    return _blob_dataset(96, 0, "train")


@pytest.fixture
def tiny_test():
    return _blob_dataset(48, 1, "test")
