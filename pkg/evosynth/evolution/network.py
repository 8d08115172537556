import dataclasses
import os
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import compress_pickle
import numpy as np

from evosynth.constants import CHECKPOINT_FORMAT, CHECKPOINT_VERSION
from evosynth.evolution import numerics
from evosynth.evolution.errors import ArchitectureError, CheckpointError

LAYER_KINDS = ("conv", "pool", "fc", "relu", "softmax")
PARAMETRIC_KINDS = ("conv", "fc")

# desk-scale LeNet: conv(8@5x5)-pool-conv(16@5x5)-pool-fc(128)-fc(10)
DEFAULT_ARCHITECTURE = (
    {"kind": "conv", "out_channels": 8, "kernel": 5},
    {"kind": "relu"},
    {"kind": "pool"},
    {"kind": "conv", "out_channels": 16, "kernel": 5},
    {"kind": "relu"},
    {"kind": "pool"},
    {"kind": "fc", "out_features": 128},
    {"kind": "relu"},
    {"kind": "fc", "out_features": 10},
    {"kind": "softmax"},
)
MNIST_INPUT_SHAPE = (1, 28, 28)

_ALLOWED_KEYS = {
    "conv": {"kind", "out_channels", "kernel"},
    "fc": {"kind", "out_features"},
    "pool": {"kind"},
    "relu": {"kind"},
    "softmax": {"kind"},
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    out_channels: int = 0
    in_channels: int = 0
    kernel: Tuple[int, int] = (0, 0)
    out_features: int = 0
    in_features: int = 0

    @property
    def parametric(self) -> bool:
        return self.kind in PARAMETRIC_KINDS

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        if self.kind == "conv":
            return (self.out_channels, self.in_channels, *self.kernel)
        if self.kind == "fc":
            return (self.out_features, self.in_features)
        return ()

    @property
    def fan_in_out(self) -> Tuple[int, int]:
        if self.kind == "conv":
            area = self.kernel[0] * self.kernel[1]
            return self.in_channels * area, self.out_channels * area
        return self.in_features, self.out_features

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data["kernel"] = list(self.kernel)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LayerSpec":
        data = dict(data)
        data["kernel"] = tuple(data.get("kernel", (0, 0)))
        return cls(**data)


@dataclass(frozen=True)
class ArchConfig:
    layers: Tuple[Dict[str, Any], ...] = DEFAULT_ARCHITECTURE
    input_shape: Tuple[int, int, int] = MNIST_INPUT_SHAPE


@dataclass(frozen=True, eq=False)
class NetworkArch:
    """H(N, S): layer specs plus, per parametric layer, weights, biases and
    the binary synapse mask."""

    layers: Tuple[LayerSpec, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    masks: Tuple[np.ndarray, ...]
    generation: int = 1
    input_shape: Tuple[int, int, int] = MNIST_INPUT_SHAPE

    @property
    def parametric_layers(self) -> List[LayerSpec]:
        return [layer for layer in self.layers if layer.parametric]

    @property
    def layer_names(self) -> List[str]:
        return [layer.name for layer in self.parametric_layers]

    @property
    def num_classes(self) -> int:
        return self.parametric_layers[-1].out_features

    def replace(self, **changes) -> "NetworkArch":
        return dataclasses.replace(self, **changes)

    def validate(self) -> "NetworkArch":
        if self.generation < 1:
            raise ArchitectureError(f"generation must be >= 1, got {self.generation}")
        specs = self.parametric_layers
        if not len(specs) == len(self.weights) == len(self.biases) == len(self.masks):
            raise ArchitectureError("weights, biases and masks must cover every parametric layer")
        for spec, weights, bias, mask in zip(specs, self.weights, self.biases, self.masks):
            if weights.shape != spec.weight_shape:
                raise ArchitectureError(
                    f"{spec.name}: weight shape {weights.shape} != {spec.weight_shape}"
                )
            if mask.shape != weights.shape:
                raise ArchitectureError(
                    f"{spec.name}: mask shape {mask.shape} != weight shape {weights.shape}"
                )
            if bias.shape != (spec.weight_shape[0],):
                raise ArchitectureError(f"{spec.name}: bias shape {bias.shape}")
            if not np.all((mask == 0) | (mask == 1)):
                raise ArchitectureError(f"{spec.name}: mask entries must be 0 or 1")
            if np.any(weights[mask == 0] != 0):
                raise ArchitectureError(f"{spec.name}: pruned synapses carry non-zero weight")
        return self


@dataclass(frozen=True, eq=False)
class ClusterPartition:
    """Per parametric layer, the cluster id of every weight coordinate."""

    cluster_ids: Tuple[np.ndarray, ...]
    counts: Tuple[int, ...]

    def sizes(self, layer_index: int) -> np.ndarray:
        return np.bincount(
            self.cluster_ids[layer_index].ravel(), minlength=self.counts[layer_index]
        )


class SynapseCount(NamedTuple):
    per_layer: List[int]
    total: int


def resolve_layers(config: ArchConfig) -> List[LayerSpec]:
    """Turn the user-facing layer list into fully shaped LayerSpecs, checking
    that consecutive layers compose."""
    if len(config.input_shape) != 3 or min(config.input_shape) < 1:
        raise ArchitectureError(f"input shape must be (C, H, W), got {config.input_shape}")

    shape: Tuple[int, ...] = tuple(int(d) for d in config.input_shape)
    counters = {kind: 0 for kind in LAYER_KINDS}
    specs = []
    for index, layer in enumerate(config.layers):
        kind = layer.get("kind")
        if kind not in LAYER_KINDS:
            raise ArchitectureError(f"layer {index}: unknown kind {kind!r}")
        unknown = set(layer) - _ALLOWED_KEYS[kind]
        if unknown:
            raise ArchitectureError(f"layer {index} ({kind}): unknown keys {sorted(unknown)}")
        if specs and specs[-1].kind == "softmax":
            raise ArchitectureError(f"layer {index}: softmax must be the last layer")
        counters[kind] += 1
        name = kind if kind == "softmax" else f"{kind}{counters[kind]}"

        if kind == "conv":
            if len(shape) != 3:
                raise ArchitectureError(f"layer {index}: conv cannot follow a fully connected layer")
            kernel = layer.get("kernel")
            kernel = (kernel, kernel) if isinstance(kernel, int) else tuple(kernel or ())
            out_channels = int(layer.get("out_channels", 0))
            if len(kernel) != 2 or min(kernel) < 1 or out_channels < 1:
                raise ArchitectureError(f"layer {index}: conv needs out_channels and kernel")
            channels, height, width = shape
            if kernel[0] > height or kernel[1] > width:
                raise ArchitectureError(
                    f"layer {index}: kernel {kernel[0]}x{kernel[1]} exceeds input {height}x{width}"
                )
            specs.append(
                LayerSpec(
                    kind,
                    name,
                    out_channels=out_channels,
                    in_channels=channels,
                    kernel=(int(kernel[0]), int(kernel[1])),
                )
            )
            shape = (out_channels, height - kernel[0] + 1, width - kernel[1] + 1)
        elif kind == "pool":
            if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
                raise ArchitectureError(f"layer {index}: pooling needs a spatial input of at least 2x2, got {shape}")
            specs.append(LayerSpec(kind, name))
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif kind == "fc":
            out_features = int(layer.get("out_features", 0))
            if out_features < 1:
                raise ArchitectureError(f"layer {index}: fc needs out_features >= 1")
            in_features = int(np.prod(shape))
            specs.append(LayerSpec(kind, name, out_features=out_features, in_features=in_features))
            shape = (out_features,)
        else:
            specs.append(LayerSpec(kind, name))

    parametric = [spec for spec in specs if spec.parametric]
    if not parametric or parametric[-1].kind != "fc" or len(shape) != 1:
        raise ArchitectureError("the network must end in a fully connected layer")
    return specs


def glorot_uniform(spec: LayerSpec, rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = spec.fan_in_out
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=spec.weight_shape)


def build_network(config: Optional[ArchConfig] = None, seed: int = 0) -> NetworkArch:
    config = config or ArchConfig()
    specs = resolve_layers(config)
    rng = np.random.default_rng(seed)
    weights, biases, masks = [], [], []
    for spec in specs:
        if not spec.parametric:
            continue
        weights.append(glorot_uniform(spec, rng))
        biases.append(np.zeros(spec.weight_shape[0]))
        masks.append(np.ones(spec.weight_shape))
    return NetworkArch(
        layers=tuple(specs),
        weights=tuple(weights),
        biases=tuple(biases),
        masks=tuple(masks),
        generation=1,
        input_shape=tuple(config.input_shape),
    )


def count_synapses(net: NetworkArch) -> SynapseCount:
    per_layer = [int(np.count_nonzero(mask)) for mask in net.masks]
    return SynapseCount(per_layer=per_layer, total=sum(per_layer))


def cluster_ids_for_shape(shape: Tuple[int, ...]) -> Tuple[np.ndarray, int]:
    """Conv weights (4-d): one cluster per (out_channel, in_channel) kernel
    slice. FC weights (2-d): one cluster per output neuron's fan-in."""
    if len(shape) == 4:
        pairs = np.arange(shape[0] * shape[1]).reshape(shape[0], shape[1])
        ids = np.broadcast_to(pairs[:, :, None, None], shape)
        count = shape[0] * shape[1]
    elif len(shape) == 2:
        ids = np.broadcast_to(np.arange(shape[0])[:, None], shape)
        count = shape[0]
    else:
        raise ArchitectureError(f"no cluster rule for weights of shape {shape}")
    return np.ascontiguousarray(ids, dtype=np.int64), count


def cluster_partition(net: NetworkArch) -> ClusterPartition:
    cluster_ids, counts = [], []
    for spec in net.parametric_layers:
        ids, count = cluster_ids_for_shape(spec.weight_shape)
        cluster_ids.append(ids)
        counts.append(count)
    return ClusterPartition(cluster_ids=tuple(cluster_ids), counts=tuple(counts))


def live_cluster_flags(mask: np.ndarray, ids: np.ndarray, count: int) -> np.ndarray:
    return np.bincount(ids.ravel(), weights=mask.ravel(), minlength=count) > 0


def count_live_clusters(net: NetworkArch, partition: ClusterPartition) -> List[int]:
    return [
        int(live_cluster_flags(mask, ids, count).sum())
        for mask, ids, count in zip(net.masks, partition.cluster_ids, partition.counts)
    ]


def count_dead_units(net: NetworkArch) -> List[int]:
    """Output channels / neurons with no surviving synapse, per layer."""
    return [
        int((~mask.reshape(mask.shape[0], -1).any(axis=1)).sum()) for mask in net.masks
    ]


def forward(
    net: NetworkArch, images: np.ndarray, keep_cache: bool = False
) -> Tuple[np.ndarray, list]:
    """Run the network up to the logits (softmax is folded into the loss)."""
    cache = []
    x = images
    p = 0
    for spec in net.layers:
        if spec.kind == "conv":
            out = numerics.conv2d_forward(x, net.weights[p], net.biases[p], net.masks[p])
            extra = p
            p += 1
        elif spec.kind == "fc":
            out = numerics.fc_forward(x, net.weights[p], net.biases[p], net.masks[p])
            extra = p
            p += 1
        elif spec.kind == "pool":
            out, extra = numerics.maxpool2x2_forward(x)
        elif spec.kind == "relu":
            out, extra = numerics.relu_forward(x), None
        else:
            continue
        if keep_cache:
            cache.append((spec, x, extra))
        x = out
    return x, cache


def backward(net: NetworkArch, cache: list, logits_grad: np.ndarray) -> List[numerics.LayerGrad]:
    grads: List[Optional[numerics.LayerGrad]] = [None] * len(net.weights)
    grad = logits_grad
    for spec, layer_input, extra in reversed(cache):
        if spec.kind == "conv":
            layer_grad = numerics.conv2d_backward(
                layer_input, net.weights[extra], net.masks[extra], grad
            )
            grads[extra] = layer_grad
            grad = layer_grad.input_grad
        elif spec.kind == "fc":
            layer_grad = numerics.fc_backward(
                layer_input, net.weights[extra], net.masks[extra], grad
            )
            grads[extra] = layer_grad
            grad = layer_grad.input_grad
        elif spec.kind == "pool":
            grad = numerics.maxpool2x2_backward(grad, extra, layer_input.shape)
        elif spec.kind == "relu":
            grad = numerics.relu_backward(layer_input, grad)
    return grads


def predict(net: NetworkArch, images: np.ndarray) -> np.ndarray:
    logits, _ = forward(net, images)
    return logits.argmax(axis=1)


def inherit(
    parent: NetworkArch,
    masks: Sequence[np.ndarray],
    inheritance: str = "warm",
    seed: int = 0,
) -> NetworkArch:
    """Build the offspring of `parent` carrying `masks`.

    warm: surviving synapses keep the parent's strengths.
    cold: surviving synapses are re-initialized with the Glorot rule.
    """
    if len(masks) != len(parent.masks):
        raise ArchitectureError(
            f"expected {len(parent.masks)} offspring masks, got {len(masks)}"
        )
    for spec, child, ancestor in zip(parent.parametric_layers, masks, parent.masks):
        if child.shape != ancestor.shape:
            raise ArchitectureError(f"{spec.name}: offspring mask shape {child.shape}")
        if np.any((child != 0) & (ancestor == 0)):
            raise ArchitectureError(f"{spec.name}: offspring mask is not a subset of the parent's")

    masks = tuple(np.asarray(mask, dtype=np.float64) for mask in masks)
    if inheritance == "warm":
        weights = tuple(numerics.apply_mask(w, m) for w, m in zip(parent.weights, masks))
        biases = tuple(b.copy() for b in parent.biases)
    elif inheritance == "cold":
        rng = np.random.default_rng(seed)
        weights = tuple(
            numerics.apply_mask(glorot_uniform(spec, rng), m)
            for spec, m in zip(parent.parametric_layers, masks)
        )
        biases = tuple(np.zeros_like(b) for b in parent.biases)
    else:
        raise ArchitectureError(f"unknown inheritance mode {inheritance!r}")

    return parent.replace(
        weights=weights, biases=biases, masks=masks, generation=parent.generation + 1
    )


def save_checkpoint(net: NetworkArch, path: str) -> str:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_shape": list(net.input_shape),
        "architecture": [spec.to_dict() for spec in net.layers],
        "generation": net.generation,
        "weights": [np.asarray(w, dtype=np.float64) for w in net.weights],
        "biases": [np.asarray(b, dtype=np.float64) for b in net.biases],
        "masks": [np.asarray(m, dtype=np.uint8) for m in net.masks],
    }
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    try:
        compress_pickle.dump(payload, path)
    except OSError as e:
        raise CheckpointError(path, f"could not be written ({e})") from e
    return path


def load_checkpoint(path: str) -> NetworkArch:
    if not os.path.exists(path):
        raise CheckpointError(path, "does not exist")
    try:
        payload = compress_pickle.load(path)
    except Exception as e:
        raise CheckpointError(path, f"could not be read ({e})") from e

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(path, "is not an evosynth checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            path, f"has version {payload.get('version')}, expected {CHECKPOINT_VERSION}"
        )

    net = NetworkArch(
        layers=tuple(LayerSpec.from_dict(d) for d in payload["architecture"]),
        weights=tuple(np.asarray(w, dtype=np.float64) for w in payload["weights"]),
        biases=tuple(np.asarray(b, dtype=np.float64) for b in payload["biases"]),
        masks=tuple(np.asarray(m, dtype=np.float64) for m in payload["masks"]),
        generation=int(payload["generation"]),
        input_shape=tuple(payload["input_shape"]),
    )
    try:
        return net.validate()
    except ArchitectureError as e:
        raise CheckpointError(path, str(e)) from e
