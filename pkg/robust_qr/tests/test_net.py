import numpy as np
import pytest

from robust_qr.core.net import (
    AdamState,
    Gradients,
    MlpModel,
    adam_step,
    backward,
    backward_batch,
    forward,
    forward_batch,
    init_model,
    linear_architecture,
    predict,
    relu_architecture,
    validate_specs,
)
from robust_qr.exceptions import DimensionMismatchError, NumericalFailureError
from robust_qr.models import ActivationEnum, LayerSpec


class TestArchitecture:
    def test_layers_must_chain(self):
        specs = [
            LayerSpec(input_dim=2, output_dim=4, activation=ActivationEnum.relu),
            LayerSpec(input_dim=3, output_dim=1),
        ]
        with pytest.raises(DimensionMismatchError, match="Layer 0 outputs 4"):
            validate_specs(specs)

    def test_final_layer_must_be_scalar(self):
        with pytest.raises(DimensionMismatchError, match="single output"):
            validate_specs([LayerSpec(input_dim=2, output_dim=3)])

    def test_three_layer_relu_network(self):
        specs = relu_architecture(1, hidden_width=64, depth=3)
        assert [s.activation for s in specs] == [
            ActivationEnum.relu,
            ActivationEnum.relu,
            ActivationEnum.identity,
        ]
        model = init_model(specs, seed=0)
        assert model.n_parameters == (64 + 64) + (64 * 64 + 64) + (64 + 1)


class TestInit:
    def test_same_seed_same_parameters(self):
        specs = relu_architecture(3, hidden_width=8)
        a = init_model(specs, seed=11)
        b = init_model(specs, seed=11)
        assert np.array_equal(a.flat_parameters(), b.flat_parameters())

    def test_weights_bounded_by_fan_in_and_biases_zero(self):
        model = init_model(relu_architecture(4, hidden_width=16), seed=2)
        for spec, w, b in zip(model.layers, model.weights, model.biases):
            assert np.all(np.abs(w) <= 1.0 / np.sqrt(spec.input_dim))
            assert np.all(b == 0.0)


class TestForward:
    def test_linear_model_is_affine(self):
        model = MlpModel(
            layers=tuple(linear_architecture(2)),
            weights=[np.array([[2.0, -1.0]])],
            biases=[np.array([0.5])],
        )
        assert forward(model, [3.0, 1.0]) == pytest.approx(5.5)
        assert np.allclose(predict(model, np.array([[0.0, 0.0], [1.0, 1.0]])), [0.5, 1.5])

    def test_wrong_input_width_raises(self):
        model = init_model(linear_architecture(3), seed=0)
        with pytest.raises(DimensionMismatchError):
            forward(model, [1.0, 2.0])
        with pytest.raises(DimensionMismatchError):
            predict(model, np.ones((4, 2)))

    def test_relu_zeroes_negative_pre_activations(self):
        specs = [
            LayerSpec(input_dim=1, output_dim=1, activation=ActivationEnum.relu),
            LayerSpec(input_dim=1, output_dim=1),
        ]
        model = MlpModel(
            layers=tuple(specs),
            weights=[np.array([[1.0]]), np.array([[1.0]])],
            biases=[np.array([0.0]), np.array([0.0])],
        )
        assert forward(model, [-2.0]) == 0.0
        assert forward(model, [2.0]) == 2.0


def _pre_activations_clear_of_kinks(model, x, margin=1e-3):
    _, cache = forward_batch(model, np.asarray(x).reshape(1, -1))
    return all(
        np.all(np.abs(z) > margin)
        for spec, z in zip(model.layers, cache.pre_activations)
        if spec.activation == ActivationEnum.relu
    )


def test_backward_matches_central_differences():
    h = 1e-5
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 100:
        d = int(rng.integers(1, 4))
        model = init_model(relu_architecture(d, hidden_width=5, depth=3), seed=int(rng.integers(1_000_000)))
        model = model.with_flat_parameters(model.flat_parameters() + 0.1 * rng.standard_normal(model.n_parameters))
        x = rng.standard_normal(d)
        if not _pre_activations_clear_of_kinks(model, x):
            continue

        analytic = backward(model, x, 1.0).flatten()
        theta = model.flat_parameters()
        numeric = np.empty_like(theta)
        for k in range(theta.size):
            step = np.zeros_like(theta)
            step[k] = h
            numeric[k] = (
                forward(model.with_flat_parameters(theta + step), x)
                - forward(model.with_flat_parameters(theta - step), x)
            ) / (2 * h)
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-8)
        checked += 1


def test_backward_batch_sums_per_row_gradients():
    model = init_model(relu_architecture(2, hidden_width=6), seed=4)
    X = np.random.default_rng(1).standard_normal((5, 2))
    upstream = np.array([0.5, -1.0, 2.0, 0.0, 1.5])

    _, cache = forward_batch(model, X)
    total = backward_batch(model, cache, upstream).flatten()
    summed = sum(backward(model, X[i], upstream[i]).flatten() for i in range(5))
    assert np.allclose(total, summed)


class TestAdam:
    def test_first_step_moves_each_parameter_by_learning_rate(self):
        model = init_model(linear_architecture(3), seed=0)
        grads = Gradients(weights=[np.array([[2.0, -0.5, 3.0]])], biases=[np.array([-4.0])])
        state = AdamState.for_model(model, learning_rate=0.01)

        new_model, new_state = adam_step(model, grads, state)

        delta = new_model.flat_parameters() - model.flat_parameters()
        assert np.allclose(delta, -0.01 * np.sign(grads.flatten()), atol=1e-8)
        assert new_state.t == 1
        assert state.t == 0

    def test_inputs_are_not_mutated(self):
        model = init_model(linear_architecture(2), seed=0)
        before = model.flat_parameters().copy()
        grads = Gradients(weights=[np.ones((1, 2))], biases=[np.ones(1)])
        adam_step(model, grads, AdamState.for_model(model))
        assert np.array_equal(model.flat_parameters(), before)

    def test_non_finite_gradient_raises(self):
        model = init_model(linear_architecture(2), seed=0)
        grads = Gradients(weights=[np.array([[np.nan, 1.0]])], biases=[np.zeros(1)])
        with pytest.raises(NumericalFailureError):
            adam_step(model, grads, AdamState.for_model(model))

    def test_shape_mismatch_raises(self):
        model = init_model(linear_architecture(2), seed=0)
        grads = Gradients(weights=[np.ones((1, 3))], biases=[np.zeros(1)])
        with pytest.raises(DimensionMismatchError):
            adam_step(model, grads, AdamState.for_model(model))
