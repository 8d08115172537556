import numpy as np
import pytest

from evosynth.evolution.errors import ConfigError, DegenerateNetworkError
from evosynth.evolution.heredity import DnaModel, LayerDna, encode_dna
from evosynth.evolution.network import cluster_ids_for_shape, cluster_partition
from evosynth.evolution.synthesis import (
    EnvFactors,
    calibrate,
    effective_probs,
    expected_layer_counts,
    expected_synapse_count,
    sample_offspring,
    synapse_count_std,
)


def _layer(name, cluster_prob, synapse_prob):
    synapse_prob = np.asarray(synapse_prob, dtype=np.float64)
    ids, _ = cluster_ids_for_shape(synapse_prob.shape)
    return LayerDna(
        name=name,
        cluster_prob=np.asarray(cluster_prob, dtype=np.float64),
        synapse_prob=synapse_prob,
        cluster_ids=ids,
        Z=1.0,
        z=1.0,
        tau=0.0,
    )


def _ones_dna(rows=10, cols=100):
    return DnaModel(layers=(_layer("fc1", np.ones(rows), np.ones((rows, cols))),))


@pytest.fixture
def small_dna():
    # fc1: 3 clusters of 4, the last synapse of cluster 0 pruned; conv1: 2x1 kernels of 2x2
    fc = _layer(
        "fc1",
        [1.0, 0.6, 0.45],
        [[1.0, 0.8, 0.5, 0.0], [0.9, 0.7, 0.4, 0.37], [1.0, 0.6, 0.5, 0.4]],
    )
    conv = _layer(
        "conv1",
        [0.7, 1.0],
        np.array([0.5, 0.9, 1.0, 0.4, 0.6, 0.8, 0.45, 0.38]).reshape(2, 1, 2, 2),
    )
    return DnaModel(layers=(conv, fc))


def _draw(dna, env, draws, seed=0):
    rng = np.random.default_rng(seed)
    return [sample_offspring(dna, env, rng) for _ in range(draws)]


class TestEnvFactors:
    @pytest.mark.parametrize("budget", [0.0, -0.1, 1.5])
    def test_budget_range(self, budget):
        with pytest.raises(ConfigError):
            EnvFactors(budget=budget)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            EnvFactors(mode="kernel_only")

    def test_default_scales_are_one(self):
        assert EnvFactors().scales(3) == (1.0, 1.0)


class TestExpectedSynapseCount:
    def test_all_ones_gives_parent_count(self):
        assert expected_synapse_count(_ones_dna(), EnvFactors()) == 1000.0

    def test_zero_cluster_scale_gives_zero(self):
        env = EnvFactors(cluster_scale=(0.0,), synapse_scale=(1.0,))
        assert expected_synapse_count(_ones_dna(), env) == 0.0

    def test_synapse_only_ignores_cluster_factor(self, small_dna):
        env = EnvFactors(mode="synapse_only", cluster_scale=(0.0, 0.0))
        assert expected_synapse_count(small_dna, env) == pytest.approx(
            sum(float(layer.synapse_prob.sum()) for layer in small_dna.layers)
        )

    def test_matches_monte_carlo_mean(self, small_dna):
        env = EnvFactors(cluster_scale=(0.9, 1.0), synapse_scale=(1.0, 0.8))
        draws = 100_000
        counts = np.array(
            [sum(int(m.sum()) for m in masks) for masks in _draw(small_dna, env, draws)]
        )
        expected = expected_synapse_count(small_dna, env)
        sigma = synapse_count_std(small_dna, env)
        assert abs(counts.mean() - expected) <= 3 * sigma / np.sqrt(draws)
        assert counts.std() == pytest.approx(sigma, rel=0.02)


class TestCalibrate:
    def test_all_ones_hits_budget(self):
        env = calibrate(_ones_dna(), EnvFactors(budget=0.8), parent_count=1000)
        assert expected_synapse_count(_ones_dna(), env) == pytest.approx(800.0, abs=1e-3)
        assert env.cluster_scale[0] == env.synapse_scale[0]
        assert env.cluster_scale[0] == pytest.approx(np.sqrt(0.8), rel=1e-9)

    def test_full_budget_clamps_at_one(self, small_dna):
        env = calibrate(small_dna, EnvFactors(budget=1.0))
        assert env.cluster_scale == (1.0, 1.0)
        assert env.synapse_scale == (1.0, 1.0)
        assert expected_synapse_count(small_dna, env) <= sum(small_dna.parent_live_counts)

    def test_low_raw_expectation_is_not_inflated(self, small_dna):
        # the raw DNA already expects far fewer than 99% of the parent
        env = calibrate(small_dna, EnvFactors(budget=0.99))
        assert env.cluster_scale == (1.0, 1.0)

    def test_per_layer_budget_law(self, tiny_net):
        dna = encode_dna(tiny_net, cluster_partition(tiny_net))
        env = calibrate(dna, EnvFactors(budget=0.8))
        for expected, live in zip(expected_layer_counts(dna, env), dna.parent_live_counts):
            assert expected <= 0.8 * live + 1e-6 * live
        for index, layer in enumerate(dna.layers):
            q_c, q_i = effective_probs(layer, *env.scales(index), env.mode)
            assert np.all((q_c >= 0) & (q_c <= 1))
            assert np.all((q_i >= 0) & (q_i <= 1))

    def test_two_generations_compose(self):
        first = _ones_dna()
        env = calibrate(first, EnvFactors(budget=0.8))
        expected_first = expected_synapse_count(first, env)
        # a parent with the expected survivor count of the first offspring
        second = _ones_dna(rows=10, cols=80)
        env2 = calibrate(second, EnvFactors(budget=0.8))
        assert expected_first <= 800.0 + 1e-3
        assert expected_synapse_count(second, env2) <= 0.64 * 1000 + 1e-3

    def test_non_positive_parent_count(self):
        with pytest.raises(DegenerateNetworkError):
            calibrate(_ones_dna(), EnvFactors(), parent_count=0)


class TestSampleOffspring:
    def test_all_ones_reproduces_parent(self, small_dna):
        ones = DnaModel(
            layers=tuple(
                _layer(
                    layer.name,
                    np.where(layer.cluster_prob > 0, 1.0, 0.0),
                    np.where(layer.synapse_prob > 0, 1.0, 0.0),
                )
                for layer in small_dna.layers
            )
        )
        masks = sample_offspring(ones, EnvFactors(), np.random.default_rng(0))
        for mask, layer in zip(masks, ones.layers):
            np.testing.assert_array_equal(mask, layer.parent_mask.astype(np.float64))

    def test_subset_of_parent_mask(self, small_dna):
        for masks in _draw(small_dna, EnvFactors(), 500):
            for mask, layer in zip(masks, small_dna.layers):
                assert not np.any((mask != 0) & ~layer.parent_mask)
                assert mask.dtype == np.float64

    def test_same_seed_same_offspring(self, small_dna):
        a = sample_offspring(small_dna, EnvFactors(), np.random.default_rng(9))
        b = sample_offspring(small_dna, EnvFactors(), np.random.default_rng(9))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_zero_cluster_probability_kills_cluster(self, small_dna):
        env = EnvFactors(cluster_scale=(0.0, 1.0), synapse_scale=(1.0, 1.0))
        for masks in _draw(small_dna, env, 2000):
            np.testing.assert_array_equal(masks[0], 0.0)

    def test_inclusion_frequencies(self, small_dna):
        env = EnvFactors(cluster_scale=(0.9, 1.0), synapse_scale=(1.0, 0.8))
        draws = 20_000
        samples = _draw(small_dna, env, draws, seed=1)
        for index, layer in enumerate(small_dna.layers):
            q_c, q_i = effective_probs(layer, *env.scales(index), env.mode)
            p = q_c[layer.cluster_ids] * q_i
            freq = np.mean([masks[index] for masks in samples], axis=0)
            sigma = np.sqrt(p * (1 - p) / draws)
            assert np.all(np.abs(freq - p) <= 4 * sigma + 1e-12)

    def test_cluster_survival_probability(self, small_dna):
        env = EnvFactors(cluster_scale=(0.8, 0.8), synapse_scale=(0.8, 0.8))
        draws = 20_000
        rng = np.random.default_rng(5)
        layer = small_dna.layers[1]
        q_c, q_i = effective_probs(layer, 0.8, 0.8, env.mode)
        survival = q_c * (1 - np.prod(1 - q_i, axis=1))
        alive = np.zeros(layer.cluster_count)
        for _ in range(draws):
            alive += sample_offspring(small_dna, env, rng)[1].any(axis=1)
        freq = alive / draws
        assert np.all(np.abs(freq - survival) <= 4 * np.sqrt(survival * (1 - survival) / draws))

    def test_mode_equivalence_with_unit_cluster_probs(self, small_dna):
        unit = DnaModel(
            layers=tuple(
                _layer(layer.name, np.ones(layer.cluster_count), layer.synapse_prob)
                for layer in small_dna.layers
            )
        )
        driven = EnvFactors(mode="cluster_driven")
        baseline = EnvFactors(mode="synapse_only")
        for index, layer in enumerate(unit.layers):
            qc_a, qi_a = effective_probs(layer, 1.0, 1.0, driven.mode)
            qc_b, qi_b = effective_probs(layer, 1.0, 1.0, baseline.mode)
            np.testing.assert_array_equal(qc_a[layer.cluster_ids] * qi_a, qc_b[layer.cluster_ids] * qi_b)

        draws = 20_000
        freq_a = np.mean([m[1] for m in _draw(unit, driven, draws, seed=2)], axis=0)
        freq_b = np.mean([m[1] for m in _draw(unit, baseline, draws, seed=3)], axis=0)
        p = unit.layers[1].synapse_prob
        sigma = np.sqrt(p * (1 - p) / draws)
        assert np.all(np.abs(freq_a - freq_b) <= 4 * np.sqrt(2) * sigma + 1e-12)
