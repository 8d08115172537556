"""Cluster-driven genetic encoding.

The DNA of a trained parent is a pair of probability tables per layer:

    P(cluster c kept)  = exp(sum_{i in c} trunc(|w_i|) / Z - 1)
    P(synapse i kept)  = exp(|w_i| / z - 1)

Z is the largest truncated cluster sum of the layer and z the largest live
synapse magnitude, so the strongest cluster and the strongest synapse get
probability exactly 1. Synapses pruned in the parent, and clusters with no
live synapse, get probability 0.
"""
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import compress_json
import numpy as np

from evosynth.constants import DNA_FORMAT, DNA_VERSION
from evosynth.evolution.errors import DegenerateLayerError, NormalizerError
from evosynth.evolution.network import (
    ClusterPartition,
    NetworkArch,
    cluster_ids_for_shape,
    live_cluster_flags,
)

TAU_POLICIES = ("percentile", "absolute")


@dataclass(frozen=True, eq=False)
class LayerDna:
    name: str
    cluster_prob: np.ndarray
    synapse_prob: np.ndarray
    cluster_ids: np.ndarray
    Z: float
    z: float
    tau: float

    @property
    def cluster_count(self) -> int:
        return len(self.cluster_prob)

    @property
    def parent_mask(self) -> np.ndarray:
        # live synapses always carry probability >= exp(-1)
        return self.synapse_prob > 0

    @property
    def parent_live_count(self) -> int:
        return int(np.count_nonzero(self.synapse_prob))


@dataclass(frozen=True, eq=False)
class DnaModel:
    layers: Tuple[LayerDna, ...]
    parent_generation: int = 1

    @property
    def layer_names(self) -> List[str]:
        return [layer.name for layer in self.layers]

    @property
    def parent_live_counts(self) -> List[int]:
        return [layer.parent_live_count for layer in self.layers]


def truncate_weight(w, tau: float):
    """|w| when |w| >= tau, else 0. Works elementwise on arrays."""
    magnitude = np.abs(w)
    truncated = np.where(magnitude >= tau, magnitude, 0.0)
    return float(truncated) if np.ndim(truncated) == 0 else truncated


def cluster_synthesis_prob(truncated_sum, Z: float):
    if Z <= 0:
        raise NormalizerError(f"cluster normalizer Z must be positive, got {Z}")
    truncated_sum = np.asarray(truncated_sum, dtype=np.float64)
    if np.any(truncated_sum < 0):
        raise NormalizerError("truncated cluster sums are non-negative by construction")
    if np.any(truncated_sum > Z):
        raise NormalizerError(
            f"truncated cluster sum {truncated_sum.max()} exceeds normalizer Z={Z}"
        )
    prob = np.exp(truncated_sum / Z - 1.0)
    return float(prob) if prob.ndim == 0 else prob


def synapse_synthesis_prob(w, z: float):
    if z <= 0:
        raise NormalizerError(f"synapse normalizer z must be positive, got {z}")
    magnitude = np.abs(np.asarray(w, dtype=np.float64))
    if np.any(magnitude > z):
        raise NormalizerError(f"synaptic strength {magnitude.max()} exceeds normalizer z={z}")
    prob = np.exp(magnitude / z - 1.0)
    return float(prob) if prob.ndim == 0 else prob


def layer_taus(
    net: NetworkArch, policy: str = "percentile", value: float = 50.0
) -> List[float]:
    """Per-layer truncation thresholds.

    percentile: the `value`-th percentile of |w| over the layer's live synapses.
    absolute: `value` for every layer.
    """
    if policy == "absolute":
        if value < 0:
            raise NormalizerError(f"truncation threshold must be non-negative, got {value}")
        return [float(value)] * len(net.weights)
    if policy != "percentile":
        raise NormalizerError(f"unknown tau policy {policy!r}, expected one of {TAU_POLICIES}")
    if not 0 <= value <= 100:
        raise NormalizerError(f"tau percentile must lie in [0, 100], got {value}")

    taus = []
    for name, weights, mask in zip(net.layer_names, net.weights, net.masks):
        live = np.abs(weights[mask != 0])
        if live.size == 0:
            raise DegenerateLayerError(name, "no live synapses")
        taus.append(float(np.percentile(live, value)))
    return taus


def _encode_layer(name, weights, mask, ids, count, tau) -> LayerDna:
    live = mask != 0
    magnitude = np.where(live, np.abs(weights), 0.0)
    if not np.any(magnitude > 0):
        raise DegenerateLayerError(name, "every live synapse has zero weight")

    truncated = np.where(live, truncate_weight(magnitude, tau), 0.0)
    sums = np.bincount(ids.ravel(), weights=truncated.ravel(), minlength=count)
    live_clusters = live_cluster_flags(mask, ids, count)
    Z = float(sums[live_clusters].max())
    if Z <= 0:
        raise DegenerateLayerError(
            name, f"truncation threshold {tau} suppresses every synapse"
        )
    z = float(magnitude.max())

    cluster_prob = np.where(live_clusters, cluster_synthesis_prob(sums, Z), 0.0)
    synapse_prob = np.where(live, synapse_synthesis_prob(magnitude, z), 0.0)
    return LayerDna(
        name=name,
        cluster_prob=cluster_prob,
        synapse_prob=synapse_prob,
        cluster_ids=ids,
        Z=Z,
        z=z,
        tau=float(tau),
    )


def encode_dna(
    net: NetworkArch,
    partition: ClusterPartition,
    tau: Optional[Union[float, Sequence[float]]] = None,
    tau_policy: str = "percentile",
    tau_value: float = 50.0,
) -> DnaModel:
    """Encode the synaptic probability model of a trained parent.

    `tau` may be one threshold for every layer or one per layer; when omitted
    it is resolved from `tau_policy` / `tau_value`.
    """
    if tau is None:
        taus = layer_taus(net, tau_policy, tau_value)
    elif np.ndim(tau) == 0:
        taus = [float(tau)] * len(net.weights)
    else:
        taus = [float(t) for t in tau]
    if len(taus) != len(net.weights):
        raise NormalizerError(f"expected {len(net.weights)} thresholds, got {len(taus)}")
    if any(t < 0 for t in taus):
        raise NormalizerError("truncation thresholds must be non-negative")

    layers = tuple(
        _encode_layer(name, weights, mask, ids, count, layer_tau)
        for name, weights, mask, ids, count, layer_tau in zip(
            net.layer_names,
            net.weights,
            net.masks,
            partition.cluster_ids,
            partition.counts,
            taus,
        )
    )
    return DnaModel(layers=layers, parent_generation=net.generation)


def export_dna(dna: DnaModel, path: str) -> str:
    """Write the DNA as JSON: per layer the normalizers, threshold and both
    probability tables (synapse table nested like the weight tensor)."""
    payload = {
        "format": DNA_FORMAT,
        "version": DNA_VERSION,
        "parent_generation": dna.parent_generation,
        "layers": [
            {
                "name": layer.name,
                "Z": layer.Z,
                "z": layer.z,
                "tau": layer.tau,
                "shape": list(layer.synapse_prob.shape),
                "cluster_prob": layer.cluster_prob.tolist(),
                "synapse_prob": layer.synapse_prob.tolist(),
            }
            for layer in dna.layers
        ],
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    compress_json.dump(payload, path, json_kwargs=dict(indent=4, sort_keys=True))
    return path


def load_dna(path: str) -> DnaModel:
    payload = compress_json.load(path)
    if payload.get("format") != DNA_FORMAT or payload.get("version") != DNA_VERSION:
        raise NormalizerError(f"{path} is not a version {DNA_VERSION} evosynth DNA file")
    layers = []
    for entry in payload["layers"]:
        synapse_prob = np.asarray(entry["synapse_prob"], dtype=np.float64).reshape(entry["shape"])
        ids, _ = cluster_ids_for_shape(synapse_prob.shape)
        layers.append(
            LayerDna(
                name=entry["name"],
                cluster_prob=np.asarray(entry["cluster_prob"], dtype=np.float64),
                synapse_prob=synapse_prob,
                cluster_ids=ids,
                Z=float(entry["Z"]),
                z=float(entry["z"]),
                tau=float(entry["tau"]),
            )
        )
    return DnaModel(layers=tuple(layers), parent_generation=int(payload["parent_generation"]))
