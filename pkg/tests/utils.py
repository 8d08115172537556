import struct

import numpy as np

from evosynth.evolution.data import IMAGES_MAGIC, LABELS_MAGIC

TINY_INPUT_SHAPE = (1, 8, 8)
TINY_ARCHITECTURE = (
    {"kind": "conv", "out_channels": 4, "kernel": 3},
    {"kind": "relu"},
    {"kind": "pool"},
    {"kind": "fc", "out_features": 16},
    {"kind": "relu"},
    {"kind": "fc", "out_features": 3},
    {"kind": "softmax"},
)


def write_idx_images(path, pixels: np.ndarray) -> str:
    pixels = np.asarray(pixels, dtype=np.uint8)
    count, rows, cols = pixels.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, count, rows, cols))
        f.write(pixels.tobytes())
    return str(path)


def write_idx_labels(path, labels) -> str:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())
    return str(path)


def make_blobs(n: int, seed: int, size: int = 8):
    """Three-class toy images: a bright block top-left, top-right or along
    the bottom, over uniform noise."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 3
    rng.shuffle(labels)
    pixels = rng.integers(0, 60, size=(n, size, size))
    half = size // 2
    for index, label in enumerate(labels):
        if label == 0:
            pixels[index, :half, :half] += 180
        elif label == 1:
            pixels[index, :half, half:] += 180
        else:
            pixels[index, half:, :] += 180
    return pixels.astype(np.uint8), labels.astype(np.uint8)


def numerical_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar function f() w.r.t. x, which is
    perturbed in place and restored."""
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + h
        plus = f()
        x[index] = original - h
        minus = f()
        x[index] = original
        grad[index] = (plus - minus) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)
