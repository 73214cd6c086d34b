"""
Shared fixtures: handcrafted IDX files, synthetic datasets and small models
"""

import os
from pathlib import Path

import numpy as np
import pytest

from data_loader import SPLIT_FILES, expected_files, write_idx
from model import build_model

SYNTHETIC_TRAIN = 64
SYNTHETIC_TEST = 32


def synthetic_images(labels: np.ndarray, seed: int = 0) -> np.ndarray:
    """uint8 images with a bright horizontal band whose row encodes the label"""
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 40, size=(len(labels), 28, 28), dtype=np.uint8)
    for i, label in enumerate(labels):
        images[i, 2 * label + 2:2 * label + 6, 4:24] = 255
    return images


def write_dataset(root: Path, name: str = "mnist", n_train: int = SYNTHETIC_TRAIN,
                  n_test: int = SYNTHETIC_TEST, seed: int = 0) -> Path:
    folder = Path(root) / name
    folder.mkdir(parents=True, exist_ok=True)
    for split, n in (("train", n_train), ("test", n_test)):
        labels = (np.arange(n) % 10).astype(np.uint8)
        images_name, labels_name = SPLIT_FILES[split]
        write_idx(folder / images_name, synthetic_images(labels, seed))
        write_idx(folder / labels_name, labels)
    return Path(root)


@pytest.fixture
def data_root(tmp_path):
    """data root holding a small synthetic mnist folder"""
    return write_dataset(tmp_path / "data")


@pytest.fixture
def tiny_model():
    return build_model(0, channels=(2, 4), hidden=16)


@pytest.fixture
def mnist_root():
    root = Path(os.environ.get("MNIST_ROOT", "data"))
    if not all(p.exists() or p.with_name(p.name + ".gz").exists() for p in expected_files(root, "mnist")):
        pytest.skip(f"MNIST IDX files not found under {root}/mnist")
    return root
