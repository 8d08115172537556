"""Environmental factors and stochastic offspring synthesis.

Effective probabilities of a layer under cluster/synapse scales (s_c, s_s):

    q_c = min(1, s_c * P(cluster c))     (q_c = 1 in synapse_only mode)
    q_i = min(1, s_s * P(synapse i))

An offspring keeps cluster c with probability q_c and, inside a kept
cluster, synapse i with probability q_i.
"""
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
from colorama import Fore
from scipy.optimize import bisect

from evosynth.constants import DEBUGGING
from evosynth.evolution.errors import CalibrationError, ConfigError, DegenerateNetworkError
from evosynth.evolution.heredity import DnaModel, LayerDna

ENCODING_MODES = ("cluster_driven", "synapse_only")
MAX_BISECTION_ITERATIONS = 200
CALIBRATION_RTOL = 1e-6


@dataclass(frozen=True)
class EnvFactors:
    """F_c(E), F_s(E) as per-layer multiplicative scales. Empty scale tuples
    mean 1.0 for every layer (the raw DNA)."""

    budget: float = 0.8
    mode: str = "cluster_driven"
    cluster_scale: Tuple[float, ...] = ()
    synapse_scale: Tuple[float, ...] = ()

    def __post_init__(self):
        if not 0 < self.budget <= 1:
            raise ConfigError(f"budget must lie in (0, 1], got {self.budget}")
        if self.mode not in ENCODING_MODES:
            raise ConfigError(f"unknown encoding mode {self.mode!r}, expected one of {ENCODING_MODES}")

    def scales(self, layer_index: int) -> Tuple[float, float]:
        cluster = self.cluster_scale[layer_index] if self.cluster_scale else 1.0
        synapse = self.synapse_scale[layer_index] if self.synapse_scale else 1.0
        return cluster, synapse


def effective_probs(
    layer: LayerDna, cluster_scale: float, synapse_scale: float, mode: str
) -> Tuple[np.ndarray, np.ndarray]:
    if mode == "synapse_only":
        q_c = np.ones_like(layer.cluster_prob)
    else:
        q_c = np.minimum(1.0, cluster_scale * layer.cluster_prob)
    q_i = np.minimum(1.0, synapse_scale * layer.synapse_prob)
    return q_c, q_i


def _layer_expectation(layer: LayerDna, cluster_scale, synapse_scale, mode) -> float:
    q_c, q_i = effective_probs(layer, cluster_scale, synapse_scale, mode)
    return float(np.sum(q_c[layer.cluster_ids] * q_i))


def expected_layer_counts(dna: DnaModel, env: EnvFactors) -> List[float]:
    return [
        _layer_expectation(layer, *env.scales(index), env.mode)
        for index, layer in enumerate(dna.layers)
    ]


def expected_synapse_count(dna: DnaModel, env: EnvFactors) -> float:
    """sum_c q_c * sum_{i in c} q_i over every layer."""
    return float(sum(expected_layer_counts(dna, env)))


def synapse_count_std(dna: DnaModel, env: EnvFactors) -> float:
    """Standard deviation of the offspring synapse count.

    With S_c the number of kept synapses of a kept cluster,
    Var = sum_c q_c Var(S_c) + q_c (1 - q_c) E[S_c]^2.
    """
    variance = 0.0
    for index, layer in enumerate(dna.layers):
        q_c, q_i = effective_probs(layer, *env.scales(index), env.mode)
        ids = layer.cluster_ids.ravel()
        mean_s = np.bincount(ids, weights=q_i.ravel(), minlength=layer.cluster_count)
        var_s = np.bincount(
            ids, weights=(q_i * (1.0 - q_i)).ravel(), minlength=layer.cluster_count
        )
        variance += float(np.sum(q_c * var_s + q_c * (1.0 - q_c) * mean_s**2))
    return math.sqrt(variance)


def calibrate(
    dna: DnaModel, env: EnvFactors, parent_count: Optional[int] = None
) -> EnvFactors:
    """Fit per-layer scales so each layer expects budget * (parent live count).

    One multiplier lambda in [0, 1] per layer is found by bisection and applied
    as cluster_scale = synapse_scale = sqrt(lambda). Scales never exceed 1, so
    when even the raw DNA expects fewer synapses than the target the scales
    stay at 1.
    """
    live_counts = dna.parent_live_counts
    if parent_count is None:
        parent_count = sum(live_counts)
    if parent_count <= 0:
        raise DegenerateNetworkError(f"parent synapse count must be positive, got {parent_count}")

    cluster_scale, synapse_scale = [], []
    for layer, live in zip(dna.layers, live_counts):
        target = env.budget * live

        def excess(lam, layer=layer, target=target):
            scale = math.sqrt(lam)
            return _layer_expectation(layer, scale, scale, env.mode) - target

        if excess(1.0) <= 0:
            lam = 1.0
        else:
            try:
                lam = bisect(
                    excess,
                    0.0,
                    1.0,
                    xtol=1e-15,
                    rtol=4 * np.finfo(float).eps,
                    maxiter=MAX_BISECTION_ITERATIONS,
                )
            except RuntimeError as e:
                raise CalibrationError(layer.name, MAX_BISECTION_ITERATIONS) from e
            if abs(excess(lam)) > CALIBRATION_RTOL * target:
                raise CalibrationError(layer.name, MAX_BISECTION_ITERATIONS)

        scale = math.sqrt(lam)
        cluster_scale.append(scale)
        synapse_scale.append(scale)
        if DEBUGGING:
            print(
                f"{Fore.BLUE}calibrate {layer.name}: live {live}, target {target:.3f},"
                f" lambda {lam:.6f}, expected {excess(lam) + target:.3f}{Fore.RESET}"
            )

    return replace(env, cluster_scale=tuple(cluster_scale), synapse_scale=tuple(synapse_scale))


def sample_offspring(
    dna: DnaModel, env: EnvFactors, rng: np.random.Generator
) -> Tuple[np.ndarray, ...]:
    """Draw one offspring mask per layer.

    Per layer the cluster draws come first (skipped in synapse_only mode),
    then one draw per synapse, so a fixed generator state fixes the offspring.
    """
    masks = []
    for index, layer in enumerate(dna.layers):
        q_c, q_i = effective_probs(layer, *env.scales(index), env.mode)
        if env.mode == "synapse_only":
            cluster_alive = np.ones(layer.cluster_count, dtype=bool)
        else:
            cluster_alive = rng.random(layer.cluster_count) < q_c
        synapse_kept = rng.random(q_i.shape) < q_i
        mask = cluster_alive[layer.cluster_ids] & synapse_kept & layer.parent_mask
        masks.append(mask.astype(np.float64))
    return tuple(masks)
