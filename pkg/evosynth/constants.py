import os
from pathlib import Path

ABS_PATH_OF_EVOSYNTH = os.path.abspath(os.path.dirname(Path(__file__)))

EVOSYNTH_DATA_DIR = os.environ.get(
    "EVOSYNTH_DATA_DIR", os.path.expanduser("~/.evosynth/mnist")
)

MNIST_TRAIN_IMAGES_PATH = os.path.join(EVOSYNTH_DATA_DIR, "train-images-idx3-ubyte")
MNIST_TRAIN_LABELS_PATH = os.path.join(EVOSYNTH_DATA_DIR, "train-labels-idx1-ubyte")
MNIST_TEST_IMAGES_PATH = os.path.join(EVOSYNTH_DATA_DIR, "t10k-images-idx3-ubyte")
MNIST_TEST_LABELS_PATH = os.path.join(EVOSYNTH_DATA_DIR, "t10k-labels-idx1-ubyte")

DEFAULT_OUTPUT_DIR = os.environ.get("EVOSYNTH_OUTPUT_DIR", "./runs/evosynth")

try:
    EVOSYNTH_THREADS = max(0, int(os.environ.get("EVOSYNTH_THREADS", "0") or 0))
except ValueError:
    EVOSYNTH_THREADS = 0

SHOW_PROGRESS = os.environ.get("EVOSYNTH_PROGRESS", "1").lower() in [
    "1",
    "true",
    "t",
    "yes",
]

CHECKPOINT_FORMAT = "evosynth-checkpoint"
CHECKPOINT_VERSION = 1
DNA_FORMAT = "evosynth-dna"
DNA_VERSION = 1
REPORT_VERSION = 1

DEBUGGING = os.environ.get("DEBUGGING", "0").lower() in ["1", "true", "True", "t", "T"]
