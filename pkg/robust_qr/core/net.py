"""
Dense feedforward networks with exact reverse-mode gradients and ADAM.

Only what quantile regression over small models needs: a stack of affine
layers with identity or ReLU activations and a single scalar output.
Batch variants (`forward_batch`, `backward_batch`) do the work; the
per-sample `forward`/`backward` wrap them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from robust_qr.exceptions import DimensionMismatchError, NumericalFailureError
from robust_qr.models import ActivationEnum, LayerSpec


@dataclass
class MlpModel:
    layers: tuple[LayerSpec, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpModel":
        return MlpModel(
            layers=self.layers,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(self.weights, self.biases)]
        )

    def with_flat_parameters(self, flat: np.ndarray) -> "MlpModel":
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_parameters:
            raise DimensionMismatchError(
                f"Expected {self.n_parameters} parameters, got {flat.size}."
            )
        weights, biases = [], []
        offset = 0
        for w, b in zip(self.weights, self.biases):
            weights.append(flat[offset : offset + w.size].reshape(w.shape).copy())
            offset += w.size
            biases.append(flat[offset : offset + b.size].copy())
            offset += b.size
        return MlpModel(layers=self.layers, weights=weights, biases=biases)

    def to_dict(self) -> dict:
        return {
            "layers": [layer.model_dump(mode="json") for layer in self.layers],
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MlpModel":
        layers = tuple(LayerSpec(**layer) for layer in payload["layers"])
        model = cls(
            layers=layers,
            weights=[np.asarray(w, dtype=float) for w in payload["weights"]],
            biases=[np.asarray(b, dtype=float) for b in payload["biases"]],
        )
        _check_model_shapes(model)
        return model


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, model: MlpModel) -> "Gradients":
        return cls(
            weights=[np.zeros_like(w) for w in model.weights],
            biases=[np.zeros_like(b) for b in model.biases],
        )

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(self.weights, self.biases)]
        )

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(
            weights=[w * factor for w in self.weights],
            biases=[b * factor for b in self.biases],
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and all(
            np.all(np.isfinite(b)) for b in self.biases
        )


@dataclass
class AdamState:
    """ADAM accumulators. beta1/beta2/eps are the optimizer's constants, unrelated to the robustness beta."""

    m_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_weights: list[np.ndarray]
    v_biases: list[np.ndarray]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def for_model(cls, model: MlpModel, learning_rate: float = 1e-3, **constants) -> "AdamState":
        zeros = Gradients.zeros_like(model)
        more = Gradients.zeros_like(model)
        return cls(
            m_weights=zeros.weights,
            m_biases=zeros.biases,
            v_weights=more.weights,
            v_biases=more.biases,
            learning_rate=learning_rate,
            **constants,
        )


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations kept for the backward pass."""

    inputs: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)


def validate_specs(specs: Sequence[LayerSpec]):
    if not specs:
        raise DimensionMismatchError("A model needs at least one layer.")
    for k in range(len(specs) - 1):
        if specs[k].output_dim != specs[k + 1].input_dim:
            raise DimensionMismatchError(
                f"Layer {k} outputs {specs[k].output_dim} values but layer {k + 1} "
                f"expects {specs[k + 1].input_dim}."
            )
    if specs[-1].output_dim != 1:
        raise DimensionMismatchError(
            f"The final layer must have a single output, got {specs[-1].output_dim}."
        )


def linear_architecture(input_dim: int) -> list[LayerSpec]:
    return [LayerSpec(input_dim=input_dim, output_dim=1, activation=ActivationEnum.identity)]


def relu_architecture(input_dim: int, hidden_width: int = 64, depth: int = 3) -> list[LayerSpec]:
    """`depth` affine layers, ReLU on every hidden layer, identity on the output."""
    if depth < 2:
        return linear_architecture(input_dim)
    specs = [LayerSpec(input_dim=input_dim, output_dim=hidden_width, activation=ActivationEnum.relu)]
    for _ in range(depth - 2):
        specs.append(
            LayerSpec(input_dim=hidden_width, output_dim=hidden_width, activation=ActivationEnum.relu)
        )
    specs.append(LayerSpec(input_dim=hidden_width, output_dim=1, activation=ActivationEnum.identity))
    return specs


def init_model(specs: Sequence[LayerSpec], seed: int) -> MlpModel:
    """
    Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.

    Raises:
        DimensionMismatchError: If the layer specs do not chain.
    """
    specs = tuple(specs)
    validate_specs(specs)
    rng = np.random.default_rng(seed)

    weights, biases = [], []
    for spec in specs:
        bound = 1.0 / np.sqrt(spec.input_dim)
        weights.append(rng.uniform(-bound, bound, size=(spec.output_dim, spec.input_dim)))
        biases.append(np.zeros(spec.output_dim))
    return MlpModel(layers=specs, weights=weights, biases=biases)


def _activate(z: np.ndarray, activation: ActivationEnum) -> np.ndarray:
    if activation == ActivationEnum.relu:
        return np.maximum(z, 0.0)
    return z


def _activation_derivative(z: np.ndarray, activation: ActivationEnum) -> np.ndarray:
    if activation == ActivationEnum.relu:
        # subgradient at exactly 0 is 0
        return (z > 0.0).astype(float)
    return np.ones_like(z)


def _check_model_shapes(model: MlpModel):
    validate_specs(model.layers)
    for k, (spec, w, b) in enumerate(zip(model.layers, model.weights, model.biases)):
        if w.shape != (spec.output_dim, spec.input_dim) or b.shape != (spec.output_dim,):
            raise DimensionMismatchError(
                f"Layer {k} parameters have shapes {w.shape}/{b.shape}, "
                f"expected {(spec.output_dim, spec.input_dim)}/{(spec.output_dim,)}."
            )


def _as_batch(model: MlpModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if model.input_dim == 1 and X.size != 1 else X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DimensionMismatchError(
            f"Model expects {model.input_dim} features per row, got array of shape {np.shape(X)}."
        )
    return X


def forward_batch(model: MlpModel, X) -> tuple[np.ndarray, ForwardCache]:
    """Predictions for every row of X (n x d) plus the cache needed by backward_batch."""
    a = _as_batch(model, X)
    cache = ForwardCache()
    for spec, w, b in zip(model.layers, model.weights, model.biases):
        z = a @ w.T + b
        cache.inputs.append(a)
        cache.pre_activations.append(z)
        a = _activate(z, spec.activation)
    return a[:, 0], cache


def predict(model: MlpModel, X) -> np.ndarray:
    return forward_batch(model, X)[0]


def backward_batch(model: MlpModel, cache: ForwardCache, upstream) -> Gradients:
    """Sum over rows of upstream[i] * d prediction_i / d theta."""
    upstream = np.asarray(upstream, dtype=float).reshape(-1, 1)
    n_rows = cache.inputs[0].shape[0]
    if upstream.shape[0] != n_rows:
        raise DimensionMismatchError(
            f"Upstream has {upstream.shape[0]} entries for a batch of {n_rows} rows."
        )

    n_layers = len(model.layers)
    grad_w: list[np.ndarray] = [None] * n_layers
    grad_b: list[np.ndarray] = [None] * n_layers

    delta = upstream * _activation_derivative(
        cache.pre_activations[-1], model.layers[-1].activation
    )
    for k in range(n_layers - 1, -1, -1):
        grad_w[k] = delta.T @ cache.inputs[k]
        grad_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ model.weights[k]) * _activation_derivative(
                cache.pre_activations[k - 1], model.layers[k - 1].activation
            )
    return Gradients(weights=grad_w, biases=grad_b)


def forward(model: MlpModel, x) -> float:
    """
    Evaluate the network on a single feature vector.

    Raises:
        DimensionMismatchError: If x does not match the first layer's input_dim.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.input_dim:
        raise DimensionMismatchError(
            f"Model expects {model.input_dim} features, got {x.size}."
        )
    return float(forward_batch(model, x.reshape(1, -1))[0][0])


def backward(model: MlpModel, x, upstream: float) -> Gradients:
    """Gradient of the prediction at x with respect to every parameter, scaled by upstream."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.input_dim:
        raise DimensionMismatchError(
            f"Model expects {model.input_dim} features, got {x.size}."
        )
    _, cache = forward_batch(model, x.reshape(1, -1))
    return backward_batch(model, cache, np.array([upstream]))


def adam_step(model: MlpModel, grads: Gradients, state: AdamState) -> tuple[MlpModel, AdamState]:
    """
    One bias-corrected ADAM update. Returns new model and state; the inputs are left untouched.

    Raises:
        NumericalFailureError: If any gradient entry is NaN/Inf.
        DimensionMismatchError: If gradients and model are not shape-congruent.
    """
    if len(grads.weights) != len(model.weights) or any(
        g.shape != w.shape for g, w in zip(grads.weights + grads.biases, model.weights + model.biases)
    ):
        raise DimensionMismatchError("Gradients are not shape-congruent with the model.")
    if not grads.is_finite():
        raise NumericalFailureError(f"Non-finite gradient at ADAM step {state.t + 1}")

    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t

    def _update(params, g_list, m_list, v_list):
        new_params, new_m, new_v = [], [], []
        for p, g, m, v in zip(params, g_list, m_list, v_list):
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            m_hat = m / correction1
            v_hat = v / correction2
            new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
            new_m.append(m)
            new_v.append(v)
        return new_params, new_m, new_v

    weights, m_w, v_w = _update(model.weights, grads.weights, state.m_weights, state.v_weights)
    biases, m_b, v_b = _update(model.biases, grads.biases, state.m_biases, state.v_biases)

    new_model = MlpModel(layers=model.layers, weights=weights, biases=biases)
    new_state = AdamState(
        m_weights=m_w,
        m_biases=m_b,
        v_weights=v_w,
        v_biases=v_b,
        learning_rate=state.learning_rate,
        beta1=b1,
        beta2=b2,
        eps=state.eps,
        t=t,
    )
    return new_model, new_state
