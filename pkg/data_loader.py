"""
Data Loader module for the mixture-activation training engine
Handles loading of MNIST-family IDX files, normalization and batching
"""

import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from errors import ConfigError, DataError
from tensor import Tensor

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
UBYTE_CODE = 0x08
IMAGE_SIZE = 28
NUM_CLASSES = 10

DATASETS = ("mnist", "fashion_mnist", "kmnist")
SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

SeedLike = Union[int, np.random.Generator]


@dataclass
class Dataset:
    """Images [N x 1 x 28 x 28] in [0, 1] with integer labels in [0, 10)"""

    images: Tensor
    labels: np.ndarray
    name: str

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def take(self, indices: np.ndarray) -> "Dataset":
        return Dataset(Tensor(self.images.data[indices]), self.labels[indices], self.name)


@dataclass
class Batch:
    images: Tensor
    labels: np.ndarray
    indices: np.ndarray


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path: Union[str, Path]) -> np.ndarray:
    """
    Read an IDX container with an unsigned-byte payload

    Args:
        path: IDX file, optionally gzip-compressed (``.gz``)

    Returns:
        uint8 array shaped by the file's dimension list
    """
    path = Path(path)
    try:
        with _open(path) as f:
            raw = f.read()
    except FileNotFoundError as e:
        raise DataError(f"File not found: {path}") from e
    except OSError as e:
        raise DataError(f"Cannot read {path}: {e}") from e

    if len(raw) < 4:
        raise DataError(f"{path}: truncated header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != UBYTE_CODE:
        raise DataError(f"{path}: bad magic {raw[:4].hex()} (expected unsigned-byte IDX)")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise DataError(f"{path}: truncated dimension list")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = raw[header_end:]
    if len(payload) != expected:
        raise DataError(f"{path}: payload has {len(payload)} bytes, dims {dims} need {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def write_idx(path: Union[str, Path], array: np.ndarray) -> None:
    """Serialize a uint8 array as an uncompressed IDX file"""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise DataError(f"write_idx: only uint8 payloads are supported, got {array.dtype}")
    header = struct.pack(">HBB", 0, UBYTE_CODE, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes(order="C"))


def _magic(array: np.ndarray) -> int:
    return (UBYTE_CODE << 8) | array.ndim


def load_idx_images(path: Union[str, Path]) -> np.ndarray:
    """Images file (magic 0x00000803, dims [N, 28, 28]) scaled to [0, 1]"""
    raw = read_idx(path)
    if _magic(raw) != IMAGE_MAGIC:
        raise DataError(f"{path}: magic 0x{_magic(raw):08x} is not an image file (0x{IMAGE_MAGIC:08x})")
    if raw.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise DataError(f"{path}: images are {raw.shape[1:]}, expected 28x28")
    return raw.astype(np.float64) / 255.0


def load_idx_labels(path: Union[str, Path]) -> np.ndarray:
    """Labels file (magic 0x00000801, dims [N]) with values 0..9"""
    raw = read_idx(path)
    if _magic(raw) != LABEL_MAGIC:
        raise DataError(f"{path}: magic 0x{_magic(raw):08x} is not a label file (0x{LABEL_MAGIC:08x})")
    if raw.size and raw.max() >= NUM_CLASSES:
        raise DataError(f"{path}: label {int(raw.max())} out of range 0..9")
    return raw.astype(np.int64)


def expected_files(data_root: Union[str, Path], name: str) -> List[Path]:
    """Uncompressed IDX paths a dataset needs (``.gz`` siblings are accepted too)"""
    folder = Path(data_root) / name
    return [folder / filename for pair in SPLIT_FILES.values() for filename in pair]


def _resolve(path: Path) -> Path:
    if path.exists():
        return path
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        return gz
    raise DataError(f"File not found: {path} (expected {path.name} or {gz.name})")


def load_dataset(data_root: Union[str, Path], name: str, split: str) -> Dataset:
    """
    Load one split of a dataset from ``<data_root>/<name>/``

    Args:
        data_root: directory holding one folder per dataset
        name: mnist, fashion_mnist or kmnist
        split: train or test

    Returns:
        Dataset with images scaled to [0, 1]
    """
    if name not in DATASETS:
        raise ConfigError(f"unknown dataset '{name}', expected one of {DATASETS}")
    if split not in SPLIT_FILES:
        raise ConfigError(f"unknown split '{split}', expected train or test")
    images_name, labels_name = SPLIT_FILES[split]
    folder = Path(data_root) / name
    images = load_idx_images(_resolve(folder / images_name))
    labels = load_idx_labels(_resolve(folder / labels_name))
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{name}/{split}: {images.shape[0]} images but {labels.shape[0]} labels")
    logger.info(f"✅ Loaded {labels.shape[0]} {split} samples of {name} from {folder}")
    return Dataset(Tensor(images[:, None, :, :]), labels, name)


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def take_subset(d: Dataset, subset: Optional[int], seed: SeedLike) -> Dataset:
    """First ``subset`` items after one seeded shuffle (whole dataset when None)"""
    if subset is None or subset >= len(d):
        return d
    if subset < 1:
        raise ConfigError(f"subset must be >= 1, got {subset}")
    order = _rng(seed).permutation(len(d))[:subset]
    return d.take(order)


def make_batches(d: Dataset, batch_size: int, seed: SeedLike, subset: Optional[int] = None) -> List[Batch]:
    """
    Shuffle and cut one epoch into batches; the last short batch is kept

    A Generator seed advances with each call, giving a fresh order per epoch.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    rng = _rng(seed)
    if subset is not None:
        d = take_subset(d, subset, rng)
    order = rng.permutation(len(d))
    batches = []
    for start in range(0, len(d), batch_size):
        idx = order[start:start + batch_size]
        batches.append(Batch(Tensor(d.images.data[idx]), d.labels[idx], idx))
    return batches
