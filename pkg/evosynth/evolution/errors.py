class EvosynthError(Exception):
    """Base class of every failure raised by the evosynth package."""


class ShapeMismatchError(EvosynthError, ValueError):
    def __init__(self, op: str, dimension: str, expected, actual):
        self.op = op
        self.dimension = dimension
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"{op}: shape mismatch in {dimension} (expected {expected}, got {actual})"
        )


class LabelRangeError(EvosynthError, ValueError):
    def __init__(self, label: int, num_classes: int):
        self.label = label
        self.num_classes = num_classes
        super().__init__(f"label {label} outside [0, {num_classes - 1}]")


class NonFiniteGradientError(EvosynthError, FloatingPointError):
    def __init__(self, parameter: str):
        self.parameter = parameter
        super().__init__(f"non-finite gradient for {parameter}, update aborted")


class ArchitectureError(EvosynthError, ValueError):
    pass


class NormalizerError(EvosynthError, ValueError):
    pass


class DegenerateLayerError(EvosynthError, ValueError):
    def __init__(self, layer: str, reason: str):
        self.layer = layer
        super().__init__(f"layer {layer} is degenerate: {reason}")


class DegenerateNetworkError(EvosynthError, ValueError):
    pass


class CalibrationError(EvosynthError, RuntimeError):
    def __init__(self, layer: str, iterations: int):
        self.layer = layer
        self.iterations = iterations
        super().__init__(
            f"calibration of layer {layer} did not converge after {iterations} iterations"
        )


class IdxFormatError(EvosynthError, ValueError):
    def __init__(self, path: str, offset: int, reason: str):
        self.path = path
        self.offset = offset
        self.reason = reason
        super().__init__(f"{path}: {reason} at offset {offset}")


class DatasetError(EvosynthError, ValueError):
    pass


class DatasetNotFoundError(EvosynthError, FileNotFoundError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(
            f"dataset file {path} does not exist. Download the uncompressed MNIST IDX"
            f" files and point EVOSYNTH_DATA_DIR (or the config paths) at them."
        )


class TrainingDivergedError(EvosynthError, FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch}, batch {batch} (loss {loss})")


class ConfigError(EvosynthError, ValueError):
    pass


class CheckpointError(EvosynthError, ValueError):
    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"checkpoint {path}: {reason}")


class ReportError(EvosynthError, ValueError):
    pass
