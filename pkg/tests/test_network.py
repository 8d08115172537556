import numpy as np
import pytest

from evosynth.evolution import network
from evosynth.evolution.errors import ArchitectureError, CheckpointError
from evosynth.evolution.network import (
    ArchConfig,
    build_network,
    cluster_partition,
    count_dead_units,
    count_live_clusters,
    count_synapses,
    inherit,
    load_checkpoint,
    resolve_layers,
    save_checkpoint,
)
from evosynth.evolution.numerics import softmax_cross_entropy
from tests.utils import numerical_gradient, relative_error


class TestBuildNetwork:
    def test_default_architecture_synapse_count(self):
        net = build_network(seed=0)
        counts = count_synapses(net)
        assert net.layer_names == ["conv1", "conv2", "fc1", "fc2"]
        assert counts.per_layer == [200, 3200, 32768, 1280]
        assert counts.total == 37448
        assert net.generation == 1
        assert net.num_classes == 10

    def test_dense_masks_and_bounded_init(self, tiny_net):
        for spec, w, m in zip(tiny_net.parametric_layers, tiny_net.weights, tiny_net.masks):
            fan_in, fan_out = spec.fan_in_out
            assert np.all(m == 1.0)
            assert np.abs(w).max() <= np.sqrt(6.0 / (fan_in + fan_out))

    def test_seed_determines_weights(self, tiny_arch):
        a = build_network(tiny_arch, seed=3)
        b = build_network(tiny_arch, seed=3)
        c = build_network(tiny_arch, seed=4)
        for wa, wb, wc in zip(a.weights, b.weights, c.weights):
            np.testing.assert_array_equal(wa, wb)
            assert not np.array_equal(wa, wc)

    @pytest.mark.parametrize(
        "layers",
        [
            ({"kind": "conv", "out_channels": 2, "kernel": 30}, {"kind": "fc", "out_features": 10}),
            ({"kind": "fc", "out_features": 10}, {"kind": "conv", "out_channels": 2, "kernel": 3}),
            ({"kind": "dropout"}, {"kind": "fc", "out_features": 10}),
            ({"kind": "fc", "out_features": 10, "bias": False},),
            ({"kind": "conv", "out_channels": 2, "kernel": 3},),
            ({"kind": "softmax"}, {"kind": "fc", "out_features": 10}),
        ],
    )
    def test_invalid_architectures(self, layers):
        with pytest.raises(ArchitectureError):
            resolve_layers(ArchConfig(layers=layers))


class TestClusters:
    def test_default_partition_counts(self):
        partition = cluster_partition(build_network(seed=0))
        assert partition.counts == (8, 128, 128, 10)
        np.testing.assert_array_equal(partition.sizes(0), 25)
        np.testing.assert_array_equal(partition.sizes(2), 256)

    def test_every_synapse_belongs_to_exactly_one_cluster(self, tiny_net):
        partition = cluster_partition(tiny_net)
        for index, (ids, count, w) in enumerate(
            zip(partition.cluster_ids, partition.counts, tiny_net.weights)
        ):
            assert ids.shape == w.shape
            assert ids.min() == 0 and ids.max() == count - 1
            assert partition.sizes(index).sum() == w.size

    def test_live_clusters_and_dead_units(self, tiny_net):
        masks = [m.copy() for m in tiny_net.masks]
        masks[0][1, 0] = 0.0  # one whole kernel of conv1
        masks[1][2, :] = 0.0  # every fan-in synapse of fc1 neuron 2
        masks[1][3, :-1] = 0.0
        child = inherit(tiny_net, masks)
        partition = cluster_partition(tiny_net)
        assert count_live_clusters(child, partition) == [3, 15, 3]
        assert count_dead_units(child) == [1, 1, 0]


class TestForwardBackward:
    def test_network_gradients_match_finite_differences(self, tiny_net, rng):
        images = rng.random((3, 1, 8, 8))
        labels = np.array([0, 2, 1])
        masks = [(rng.random(m.shape) < 0.8).astype(np.float64) for m in tiny_net.masks]
        net = inherit(tiny_net, masks)
        weights = [w.copy() for w in net.weights]
        net = net.replace(weights=tuple(weights))

        def loss():
            logits, _ = network.forward(net, images)
            return softmax_cross_entropy(logits, labels)[0]

        logits, cache = network.forward(net, images, keep_cache=True)
        _, logits_grad = softmax_cross_entropy(logits, labels)
        grads = network.backward(net, cache, logits_grad)
        for p, grad in enumerate(grads):
            numeric = numerical_gradient(loss, weights[p]) * net.masks[p]
            assert relative_error(grad.weight_grad, numeric) <= 1e-4
            numeric_bias = numerical_gradient(loss, net.biases[p])
            assert relative_error(grad.bias_grad, numeric_bias) <= 1e-4

    def test_predict_shape(self, tiny_net, rng):
        assert network.predict(tiny_net, rng.random((5, 1, 8, 8))).shape == (5,)


class TestInherit:
    def test_warm_inheritance_keeps_surviving_strengths(self, tiny_net, rng):
        masks = [(rng.random(m.shape) < 0.5).astype(np.float64) for m in tiny_net.masks]
        child = inherit(tiny_net, masks)
        assert child.generation == 2
        for w_parent, w_child, m in zip(tiny_net.weights, child.weights, masks):
            np.testing.assert_array_equal(w_child[m == 1], w_parent[m == 1])
            np.testing.assert_array_equal(w_child[m == 0], 0.0)
        child.validate()

    def test_cold_inheritance_reinitializes(self, tiny_net):
        masks = list(tiny_net.masks)
        a = inherit(tiny_net, masks, inheritance="cold", seed=11)
        b = inherit(tiny_net, masks, inheritance="cold", seed=11)
        np.testing.assert_array_equal(a.weights[0], b.weights[0])
        assert not np.array_equal(a.weights[0], tiny_net.weights[0])
        np.testing.assert_array_equal(a.biases[1], 0.0)

    def test_offspring_must_be_subset_of_parent(self, tiny_net):
        masks = [m.copy() for m in tiny_net.masks]
        masks[2][0, 0] = 0.0
        child = inherit(tiny_net, masks)
        regrown = [m.copy() for m in child.masks]
        regrown[2][0, 0] = 1.0
        with pytest.raises(ArchitectureError):
            inherit(child, regrown)

    def test_unknown_mode(self, tiny_net):
        with pytest.raises(ArchitectureError):
            inherit(tiny_net, tiny_net.masks, inheritance="lukewarm")


class TestCheckpoint:
    def test_round_trip(self, tiny_net, rng, tmp_path):
        masks = [(rng.random(m.shape) < 0.6).astype(np.float64) for m in tiny_net.masks]
        child = inherit(tiny_net, masks)
        path = save_checkpoint(child, str(tmp_path / "generation_2.pkl.gz"))
        loaded = load_checkpoint(path)
        assert loaded.generation == 2
        assert loaded.layer_names == child.layer_names
        assert loaded.input_shape == child.input_shape
        for a, b in zip(loaded.weights + loaded.masks, child.weights + child.masks):
            np.testing.assert_array_equal(a, b)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(str(tmp_path / "nope.pkl.gz"))

    def test_foreign_pickle(self, tmp_path):
        import compress_pickle

        path = str(tmp_path / "other.pkl.gz")
        compress_pickle.dump({"format": "something-else"}, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
