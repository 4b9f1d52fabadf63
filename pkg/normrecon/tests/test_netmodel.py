import numpy as np
import pytest

from normrecon.errors import NonPositiveVarianceError, ShapeMismatchError
from normrecon.helpers import relu, sample_unit_ball, spawn_generators, spawn_seeds
from normrecon.models.network import NormParams, TargetLayer, TargetNetwork, WidePair
from normrecon.services import netmodel
from normrecon.services.tensor_core import operator_norm


def _random_norm(rng, width: int) -> NormParams:
    return NormParams(
        scale=rng.uniform(-2.0, 2.0, width),
        shift=rng.uniform(-1.0, 1.0, width),
        mean=rng.uniform(-1.0, 1.0, width),
        variance=rng.uniform(0.5, 2.0, width),
    )


class TestNormalization:
    """Folding and unfolding of normalization layers."""

    def test_folded_forward_matches_unfolded(self, rng):
        """gamma * (W x - mean) / s + beta equals diag(scale) W x + shift."""
        weight = rng.uniform(-1.0, 1.0, (5, 3))
        norm = _random_norm(rng, 5)
        x = rng.standard_normal((100, 3))
        direct = norm.scale * (x @ weight.T - norm.mean) / norm.variance + norm.shift
        np.testing.assert_allclose(netmodel.apply_norm_layer(weight, norm, x), direct, atol=1e-12)

    def test_fold_unfold_roundtrip(self, rng):
        """unfold_norm inverts fold_norm for fixed statistics."""
        norm = _random_norm(rng, 4)
        scale, shift = netmodel.fold_norm(np.eye(4), None, norm)
        restored = netmodel.unfold_norm(scale, shift, norm.mean, norm.variance)
        np.testing.assert_allclose(restored.scale, norm.scale, atol=1e-12)
        np.testing.assert_allclose(restored.shift, norm.shift, atol=1e-12)

    def test_nonpositive_variance_rejected(self):
        """Statistics with a zero variance are refused."""
        with pytest.raises(NonPositiveVarianceError):
            NormParams(np.ones(2), np.zeros(2), np.zeros(2), np.array([1.0, 0.0]))

    def test_fold_width_mismatch(self, rng):
        """The weight must have one row per normalized unit."""
        with pytest.raises(ShapeMismatchError):
            netmodel.fold_norm(np.ones((3, 2)), None, _random_norm(rng, 4))

    def test_identity_norm(self):
        norm = NormParams.identity(3)
        x = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(netmodel.apply_norm_layer(np.eye(3), norm, x), x)


class TestForward:
    """Forward evaluation of target networks."""

    def test_vector_and_batch_agree(self, target4, rng):
        """A single vector gives the same output as a one-row batch."""
        x = rng.standard_normal(4)
        single = netmodel.forward_target(target4, x)
        batch = netmodel.forward_target(target4, x[None, :])
        assert single.shape == (4,)
        np.testing.assert_array_equal(single, batch[0])

    def test_matches_explicit_layers(self, target4, rng):
        """ReLU follows every layer but the last."""
        x = rng.standard_normal((10, 4))
        first, second = target4.layers
        hidden = relu(x @ first.linear.T + first.shift)
        expected = hidden @ second.linear.T + second.shift
        np.testing.assert_allclose(netmodel.forward_target(target4, x), expected, atol=1e-12)

    def test_wrong_input_dimension(self, target4):
        with pytest.raises(ShapeMismatchError):
            netmodel.forward_target(target4, np.ones(3))

    def test_unknown_network_type(self):
        with pytest.raises(TypeError):
            netmodel.forward(object(), np.ones(2))

    def test_rectangular_layers(self, rng):
        """Targets may change width between layers."""
        g = TargetNetwork(
            (
                TargetLayer(np.ones(5), rng.uniform(-1, 1, (5, 3)), np.zeros(5)),
                TargetLayer(np.ones(2), rng.uniform(-1, 1, (2, 5)), np.zeros(2)),
            ),
            3,
        )
        assert netmodel.forward(g, rng.standard_normal((7, 3))).shape == (7, 2)

    def test_nonconforming_layers_rejected(self):
        with pytest.raises(ShapeMismatchError):
            TargetNetwork(
                (
                    TargetLayer(np.ones(3), np.ones((3, 2)), np.zeros(3)),
                    TargetLayer(np.ones(2), np.ones((2, 4)), np.zeros(2)),
                ),
                2,
            )

    def test_frozen_weights_are_shared(self, rng):
        """Read-only float64 weights are kept by reference; anything else is copied and frozen."""
        weight = rng.standard_normal((6, 3))
        weight.setflags(write=False)
        writable = rng.standard_normal((2, 6))
        pair = WidePair(weight, writable, NormParams.identity(6), NormParams.identity(2))
        assert pair.w_odd is weight
        assert pair.w_even is not writable
        assert not pair.w_even.flags.writeable


class TestSampling:
    """Random target networks and frozen statistics."""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_operator_norms_at_most_one(self, seed):
        """Sampled weights are rescaled into the unit operator-norm ball."""
        g = netmodel.sample_target(6, 3, seed=seed)
        for layer in g.layers:
            assert operator_norm(layer.weight) <= 1.0 + 1e-12
            assert np.all((layer.scale >= 0.5) & (layer.scale <= 1.5))
            assert np.all(np.abs(layer.shift) <= 0.5)

    def test_seeded_sampling_is_reproducible(self):
        first = netmodel.sample_target(5, 2, seed=9)
        second = netmodel.sample_target(5, 2, seed=9)
        for a, b in zip(first.layers, second.layers):
            np.testing.assert_array_equal(a.weight, b.weight)
            np.testing.assert_array_equal(a.shift, b.shift)

    def test_seed_sequence_is_not_advanced(self):
        """Spawning from a caller's SeedSequence leaves it untouched and repeatable."""
        seed = np.random.SeedSequence(7)
        first = [child.generate_state(2) for child in spawn_seeds(seed, 3)]
        second = [child.generate_state(2) for child in spawn_seeds(seed, 3)]
        assert seed.n_children_spawned == 0
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(
            netmodel.sample_target(4, 2, seed=seed).layers[0].weight,
            netmodel.sample_target(4, 2, seed=seed).layers[0].weight,
        )

    def test_lowrank_target_rank(self):
        """Low-rank targets have numerical rank at most r."""
        g = netmodel.sample_lowrank_target(6, 2, 2, seed=4)
        for layer in g.layers:
            assert np.linalg.matrix_rank(layer.linear) <= 2

    def test_experiment_teacher_sums_hidden_units(self, rng):
        """The experiment teacher outputs the sum of its ReLU hidden layer."""
        teacher = netmodel.sample_experiment_teacher(4, seed=2)
        x = rng.standard_normal((20, 4))
        hidden = relu(x @ teacher.layers[0].linear.T + teacher.layers[0].shift)
        assert teacher.output_dim == 1
        np.testing.assert_allclose(netmodel.forward(teacher, x)[:, 0], hidden.sum(axis=1), atol=1e-12)

    def test_norm_stats_ranges(self):
        norm = netmodel.sample_norm_stats(spawn_generators(0, "norms")["norms"], 50)
        np.testing.assert_array_equal(norm.scale, np.ones(50))
        assert np.all(norm.variance >= 0.5) and np.all(norm.variance <= 2.0)


class TestPropagateBound:
    """Activation norm bounds per layer."""

    def test_bound_holds_on_samples(self, target4, rng):
        """Every sampled activation stays within the propagated radius."""
        radius = 2.0
        bound = netmodel.propagate_bound(target4, radius)
        assert bound.input_radius(0) == radius
        h = sample_unit_ball(rng, 1000, 4, radius)
        for index, layer in enumerate(target4.layers):
            h = h @ layer.linear.T + layer.shift
            assert np.linalg.norm(h, axis=1).max() <= bound.radii[index + 1] + 1e-12
            h = relu(h)

    def test_zero_radius(self, target4):
        """A zero input radius bounds the first output by the shift norm."""
        bound = netmodel.propagate_bound(target4, 0.0)
        assert bound.radii[1] == pytest.approx(np.linalg.norm(target4.layers[0].shift))
