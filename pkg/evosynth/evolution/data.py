import os
import struct
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np

from evosynth.evolution.errors import (
    ConfigError,
    DatasetError,
    DatasetNotFoundError,
    IdxFormatError,
)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
NUM_CLASSES = 10


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DatasetError(f"images must be (N, C, H, W), got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DatasetError(
                f"{self.images.shape[0]} images but labels of shape {self.labels.shape}"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise DatasetError(f"labels must lie in [0, {NUM_CLASSES - 1}]")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return tuple(self.images.shape[1:])


def _read_idx(path: str, magic: int, header_dims: int) -> Tuple[bytes, Tuple[int, ...]]:
    if not os.path.exists(path):
        raise DatasetNotFoundError(path)
    with open(path, "rb") as f:
        data = f.read()

    if data[:2] == b"\x1f\x8b":
        raise IdxFormatError(path, 0, "file is gzip-compressed, decompress it first")
    header_size = 4 * (1 + header_dims)
    if len(data) < header_size:
        raise IdxFormatError(
            path, len(data), f"truncated header ({header_size} bytes expected)"
        )
    found, *dims = struct.unpack(f">{1 + header_dims}I", data[:header_size])
    if found != magic:
        raise IdxFormatError(path, 0, f"bad magic 0x{found:08x}, expected 0x{magic:08x}")

    expected = header_size + int(np.prod(dims, dtype=np.int64))
    if len(data) < expected:
        raise IdxFormatError(
            path, len(data), f"truncated payload ({expected} bytes expected for dims {dims})"
        )
    if len(data) > expected:
        raise IdxFormatError(path, expected, f"{len(data) - expected} unexpected trailing bytes")
    return data[header_size:], tuple(dims)


def load_idx_images(path: str) -> np.ndarray:
    """Read an uncompressed IDX image file into an (N, 1, rows, cols) float64
    tensor scaled into [0, 1]."""
    payload, (count, rows, cols) = _read_idx(path, IMAGES_MAGIC, 3)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, 1, rows, cols)
    return pixels.astype(np.float64) / 255.0


def load_idx_labels(path: str) -> np.ndarray:
    payload, (count,) = _read_idx(path, LABELS_MAGIC, 1)
    labels = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    out_of_range = np.flatnonzero(labels >= NUM_CLASSES)
    if out_of_range.size:
        index = int(out_of_range[0])
        raise IdxFormatError(path, 8 + index, f"label {labels[index]} outside [0, {NUM_CLASSES - 1}]")
    return labels


def load_mnist(images_path: str, labels_path: str, split: str = "train") -> Dataset:
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        # the item count lives at offset 4 in both headers
        raise IdxFormatError(
            labels_path, 4, f"{len(labels)} labels for {len(images)} images in {images_path}"
        )
    print(f"{split}: {len(images)} images loaded from {images_path}.")
    return Dataset(images=images, labels=labels, split=split)


def batches(
    dataset: Dataset, batch_size: int, seed: int
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Shuffle with a seeded permutation and yield (images, labels) batches;
    the last batch may be partial."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        index = order[start : start + batch_size]
        yield dataset.images[index], dataset.labels[index]


def num_batches(dataset: Dataset, batch_size: int) -> int:
    return -(-len(dataset) // batch_size)
