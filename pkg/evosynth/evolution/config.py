import dataclasses
import os
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import compress_json

from evosynth.constants import (
    DEFAULT_OUTPUT_DIR,
    MNIST_TEST_IMAGES_PATH,
    MNIST_TEST_LABELS_PATH,
    MNIST_TRAIN_IMAGES_PATH,
    MNIST_TRAIN_LABELS_PATH,
)
from evosynth.evolution.errors import ArchitectureError, ConfigError
from evosynth.evolution.heredity import TAU_POLICIES
from evosynth.evolution.network import (
    DEFAULT_ARCHITECTURE,
    MNIST_INPUT_SHAPE,
    ArchConfig,
    resolve_layers,
)
from evosynth.evolution.synthesis import ENCODING_MODES
from evosynth.evolution.utils import digest

INHERITANCE_MODES = ("warm", "cold")


@dataclass(frozen=True)
class RunConfig:
    """Every knob of an evolution run. The defaults reproduce the 6-generation
    MNIST run documented in the README."""

    train_images: str = MNIST_TRAIN_IMAGES_PATH
    train_labels: str = MNIST_TRAIN_LABELS_PATH
    test_images: str = MNIST_TEST_IMAGES_PATH
    test_labels: str = MNIST_TEST_LABELS_PATH

    architecture: Tuple[Dict[str, Any], ...] = DEFAULT_ARCHITECTURE
    input_shape: Tuple[int, int, int] = MNIST_INPUT_SHAPE

    tau_policy: str = "percentile"
    tau_value: float = 50.0
    budget: float = 0.8
    encoding_mode: str = "cluster_driven"

    ancestor_epochs: int = 3
    generation_epochs: int = 2
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64

    max_generations: int = 6
    accuracy_drop_threshold: float = 0.03
    seed: int = 0
    inheritance: str = "warm"

    output_dir: str = DEFAULT_OUTPUT_DIR
    save_checkpoints: bool = True
    export_dna: bool = False

    @property
    def arch_config(self) -> ArchConfig:
        return ArchConfig(layers=tuple(self.architecture), input_shape=tuple(self.input_shape))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes).validate()

    def validate(self) -> "RunConfig":
        if not 0 < self.budget <= 1:
            raise ConfigError(f"budget must lie in (0, 1], got {self.budget}")
        if not 0 < self.accuracy_drop_threshold < 1:
            raise ConfigError(
                f"accuracy_drop_threshold must lie in (0, 1), got {self.accuracy_drop_threshold}"
            )
        for key in ("ancestor_epochs", "generation_epochs", "batch_size", "max_generations"):
            value = getattr(self, key)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{key} must be an integer >= 1, got {value!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.encoding_mode not in ENCODING_MODES:
            raise ConfigError(
                f"encoding_mode must be one of {ENCODING_MODES}, got {self.encoding_mode!r}"
            )
        if self.inheritance not in INHERITANCE_MODES:
            raise ConfigError(
                f"inheritance must be one of {INHERITANCE_MODES}, got {self.inheritance!r}"
            )
        if self.tau_policy not in TAU_POLICIES:
            raise ConfigError(f"tau_policy must be one of {TAU_POLICIES}, got {self.tau_policy!r}")
        if self.tau_policy == "percentile" and not 0 <= self.tau_value <= 100:
            raise ConfigError(f"tau_value is a percentile in [0, 100], got {self.tau_value}")
        if self.tau_policy == "absolute" and self.tau_value < 0:
            raise ConfigError(f"tau_value must be non-negative, got {self.tau_value}")
        try:
            resolve_layers(self.arch_config)
        except (ArchitectureError, AttributeError, TypeError) as e:
            raise ConfigError(f"invalid architecture: {e}") from e
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data["architecture"] = [dict(layer) for layer in self.architecture]
        data["input_shape"] = list(self.input_shape)
        return data

    def digest(self) -> str:
        return digest(self.to_dict())

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        data = dict(data)
        if "architecture" in data:
            data["architecture"] = tuple(dict(layer) for layer in data["architecture"])
        if "input_shape" in data:
            data["input_shape"] = tuple(data["input_shape"])
        for key in ("tau_value", "budget", "lr", "momentum", "accuracy_drop_threshold"):
            if key in data and isinstance(data[key], int) and not isinstance(data[key], bool):
                data[key] = float(data[key])
        return cls(**data).validate()


def load_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config not found: {path}")
    try:
        data = compress_json.load(path)
    except Exception as e:
        raise ConfigError(f"could not parse config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return RunConfig.from_dict(data)


def save_config(config: RunConfig, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    compress_json.dump(config.to_dict(), path, json_kwargs=dict(indent=4, sort_keys=True))
    return path
