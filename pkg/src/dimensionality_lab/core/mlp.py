from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from dimensionality_lab.core import logger
from dimensionality_lab.core.errors import InvalidInputError, ShapeError, TrainingDivergenceError
from dimensionality_lab.core.spectrum import FeatureMatrix, as_feature_matrix

Activation = Literal["relu", "identity"]

CHECKPOINT_MAGIC = b"DLMLP001"


@dataclass(frozen=True, eq=False)
class Layer:
    """
    Affine layer: outputs = inputs @ weight + bias, weight is in x out
    """
    weight: np.ndarray
    bias: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True, eq=False)
class MlpModel:
    """
    Encoder e() producing R followed by projector g() producing Z

    The activation sits between consecutive layers of each stack; both stack outputs are linear.
    """
    encoder_layers: tuple[Layer, ...]
    projector_layers: tuple[Layer, ...]
    activation: Activation = "relu"

    def __post_init__(self):
        object.__setattr__(self, "encoder_layers", tuple(self.encoder_layers))
        object.__setattr__(self, "projector_layers", tuple(self.projector_layers))

        if not self.encoder_layers or not self.projector_layers:
            raise ShapeError("Encoder and projector need at least one layer each")
        if self.activation not in ("relu", "identity"):
            raise ShapeError(f"Unknown activation: {self.activation}")

        layers = self.encoder_layers + self.projector_layers
        for index, layer in enumerate(layers):
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.out_dim,):
                raise ShapeError(f"Layer {index} has weight {layer.weight.shape} and bias {layer.bias.shape}")
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise InvalidInputError(f"Layer {index} has non-finite parameters")
            if index > 0 and layers[index - 1].out_dim != layer.in_dim:
                raise ShapeError(f"Layer {index} expects {layer.in_dim} inputs but the previous layer produces {layers[index - 1].out_dim}")

    @property
    def input_dim(self) -> int:
        return self.encoder_layers[0].in_dim

    @property
    def representation_dim(self) -> int:
        return self.encoder_layers[-1].out_dim

    @property
    def embedding_dim(self) -> int:
        return self.projector_layers[-1].out_dim

    @property
    def encoder_dims(self) -> list[int]:
        return [self.encoder_layers[0].in_dim] + [layer.out_dim for layer in self.encoder_layers]

    @property
    def projector_dims(self) -> list[int]:
        return [self.projector_layers[0].in_dim] + [layer.out_dim for layer in self.projector_layers]

    def parameters(self) -> list[np.ndarray]:
        """
        Canonical parameter order: weight then bias of every layer, encoder first
        """
        return [array for layer in self.encoder_layers + self.projector_layers for array in (layer.weight, layer.bias)]

    def with_parameters(self, parameters: Sequence[np.ndarray], validate: bool = True) -> "MlpModel":
        """
        Copy of this model with parameters replaced, in canonical order

        validate=False skips the layer checks, for callers that keep every shape and have already checked finiteness.
        """
        count = len(self.encoder_layers)
        layers = [Layer(np.asarray(parameters[2 * i], dtype=np.float64), np.asarray(parameters[2 * i + 1], dtype=np.float64))
                  for i in range(len(parameters) // 2)]
        if validate:
            return MlpModel(tuple(layers[:count]), tuple(layers[count:]), self.activation)

        model = object.__new__(MlpModel)
        object.__setattr__(model, "encoder_layers", tuple(layers[:count]))
        object.__setattr__(model, "projector_layers", tuple(layers[count:]))
        object.__setattr__(model, "activation", self.activation)
        return model


@dataclass(frozen=True, eq=False)
class ForwardCache:
    """
    Per-layer (input, pre-activation) pairs kept for backpropagation
    """
    encoder_trace: tuple[tuple[np.ndarray, np.ndarray], ...]
    projector_trace: tuple[tuple[np.ndarray, np.ndarray], ...]


def init_mlp(input_dim: int, encoder_hidden: Sequence[int], projector_hidden: Sequence[int], seed: int | np.random.Generator,
             activation: Activation = "relu") -> MlpModel:
    """
    Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization of weights and biases
    """
    rng = np.random.default_rng(seed)

    def build(dims: list[int]) -> tuple[Layer, ...]:
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            layers.append(Layer(rng.uniform(-bound, bound, size=(fan_in, fan_out)), rng.uniform(-bound, bound, size=fan_out)))
        return tuple(layers)

    encoder_dims = [input_dim, *encoder_hidden]
    projector_dims = [encoder_dims[-1], *projector_hidden]
    return MlpModel(build(encoder_dims), build(projector_dims), activation)


def _activate(values: np.ndarray, activation: Activation) -> np.ndarray:
    return np.maximum(values, 0.0) if activation == "relu" else values


def _activation_grad(pre: np.ndarray, activation: Activation) -> np.ndarray:
    # relu'(0) is taken as 0
    return (pre > 0).astype(np.float64) if activation == "relu" else np.ones_like(pre)


def _run_stack(layers: tuple[Layer, ...], activation: Activation, inputs: np.ndarray, trace: list | None) -> np.ndarray:
    hidden = inputs
    for index, layer in enumerate(layers):
        pre = hidden @ layer.weight + layer.bias
        if trace is not None:
            trace.append((hidden, pre))
        hidden = _activate(pre, activation) if index < len(layers) - 1 else pre
    return hidden


def _check_input(model: MlpModel, X: FeatureMatrix | np.ndarray) -> FeatureMatrix:
    X = as_feature_matrix(X)
    if X.cols != model.input_dim:
        raise ShapeError(f"Model expects {model.input_dim} input features, got {X.cols}")
    return X


def forward(model: MlpModel, X: FeatureMatrix | np.ndarray) -> tuple[FeatureMatrix, FeatureMatrix, ForwardCache]:
    """
    Run encoder and projector, keeping the activations needed by backward()
    """
    R, Z, cache = forward_values(model, _check_input(model, X).values)
    return FeatureMatrix(R), FeatureMatrix(Z), cache


def forward_values(model: MlpModel, values: np.ndarray) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """
    forward() on a float64 array of width input_dim, unchecked; activations may come back non-finite
    """
    encoder_trace, projector_trace = [], []
    R = _run_stack(model.encoder_layers, model.activation, values, encoder_trace)
    Z = _run_stack(model.projector_layers, model.activation, R, projector_trace)
    return R, Z, ForwardCache(tuple(encoder_trace), tuple(projector_trace))


def represent(model: MlpModel, X: FeatureMatrix | np.ndarray) -> tuple[FeatureMatrix, FeatureMatrix]:
    """
    Evaluation-mode forward pass without a cache
    """
    R, Z = represent_values(model, _check_input(model, X).values)
    return FeatureMatrix(R), FeatureMatrix(Z)


def represent_values(model: MlpModel, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    R = _run_stack(model.encoder_layers, model.activation, values, None)
    return R, _run_stack(model.projector_layers, model.activation, R, None)


def _backprop_stack(layers: tuple[Layer, ...], trace: tuple, activation: Activation, grad_output: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    grads: list[np.ndarray] = [np.empty(0)] * (2 * len(layers))
    grad = grad_output

    for index in reversed(range(len(layers))):
        inputs, pre = trace[index]
        if index < len(layers) - 1:
            grad = grad * _activation_grad(pre, activation)

        grads[2 * index] = inputs.T @ grad
        grads[2 * index + 1] = grad.sum(axis=0)
        grad = grad @ layers[index].weight.T

    return grads, grad


def backward(model: MlpModel, cache: ForwardCache, grad_z: np.ndarray) -> list[np.ndarray]:
    """
    Gradients of a loss with respect to every parameter, given dLoss/dZ, in canonical order
    """
    grad_z = np.asarray(grad_z, dtype=np.float64)
    expected = cache.projector_trace[-1][1].shape
    if grad_z.shape != expected:
        raise ShapeError(f"Gradient shape {grad_z.shape} does not match embedding shape {expected}")

    projector_grads, grad_r = _backprop_stack(model.projector_layers, cache.projector_trace, model.activation, grad_z)
    encoder_grads, _ = _backprop_stack(model.encoder_layers, cache.encoder_trace, model.activation, grad_r)

    return encoder_grads + projector_grads


@dataclass(frozen=True, eq=False)
class AdamState:
    step: int
    first_moment: tuple[np.ndarray, ...]
    second_moment: tuple[np.ndarray, ...]

    @classmethod
    def zeros_like(cls, parameters: Sequence[np.ndarray]) -> "AdamState":
        return cls(0, tuple(np.zeros_like(p, dtype=np.float64) for p in parameters), tuple(np.zeros_like(p, dtype=np.float64) for p in parameters))


def adam_update(parameters: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> tuple[list[np.ndarray], AdamState]:
    """
    One bias-corrected Adam update over a list of parameter tensors
    """
    if len(parameters) != len(grads) or len(parameters) != len(state.first_moment):
        raise ShapeError(f"Got {len(parameters)} parameters, {len(grads)} gradients and {len(state.first_moment)} moment tensors")

    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    for index, (parameter, grad) in enumerate(zip(parameters, grads)):
        if np.shape(parameter) != grad.shape:
            raise ShapeError(f"Gradient {index} has shape {grad.shape}, parameter has {np.shape(parameter)}")
        if not np.all(np.isfinite(grad)):
            raise TrainingDivergenceError(f"Non-finite gradient for parameter {index} at optimizer step {state.step + 1}", last_good_epoch=None)

    step = state.step + 1
    first_correction = 1 - beta1 ** step
    second_correction = 1 - beta2 ** step

    updated, first_moments, second_moments = [], [], []
    for parameter, grad, first, second in zip(parameters, grads, state.first_moment, state.second_moment):
        first = beta1 * first + (1 - beta1) * grad
        second = beta2 * second + (1 - beta2) * grad ** 2
        updated.append(parameter - lr * (first / first_correction) / (np.sqrt(second / second_correction) + eps))
        first_moments.append(first)
        second_moments.append(second)

    for index, parameter in enumerate(updated):
        if not np.all(np.isfinite(parameter)):
            raise TrainingDivergenceError(f"Parameter {index} overflowed at optimizer step {step}", last_good_epoch=None)

    return updated, AdamState(step, tuple(first_moments), tuple(second_moments))


def adam_step(model: MlpModel, grads: Sequence[np.ndarray], state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[MlpModel, AdamState]:
    parameters, state = adam_update(model.parameters(), grads, state, lr, beta1, beta2, eps)
    # adam_update keeps every shape and rejects non-finite results
    return model.with_parameters(parameters, validate=False), state


def save_checkpoint(model: MlpModel, path: str | Path):
    """
    Write the flat binary layout: magic, uint32 layer counts, uint32 dimension chains, float64 parameters
    """
    header = np.array([len(model.encoder_layers), len(model.projector_layers)], dtype="<u4").tobytes()
    header += np.array(model.encoder_dims, dtype="<u4").tobytes() + np.array(model.projector_dims, dtype="<u4").tobytes()
    body = b"".join(np.ascontiguousarray(parameter, dtype="<f8").tobytes() for parameter in model.parameters())

    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + header + body)

    logger.channel("train").debug(f"Saved checkpoint with encoder {model.encoder_dims} and projector {model.projector_dims} to {path}")


def load_checkpoint(path: str | Path, activation: Activation = "relu") -> MlpModel:
    """
    Read a model written by save_checkpoint
    """
    data = Path(path).read_bytes()
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise InvalidInputError(f"'{path}' is not a model checkpoint")

    try:
        offset = len(CHECKPOINT_MAGIC)
        encoder_count, projector_count = (int(v) for v in np.frombuffer(data, dtype="<u4", count=2, offset=offset))
        offset += 8
        encoder_dims = [int(v) for v in np.frombuffer(data, dtype="<u4", count=encoder_count + 1, offset=offset)]
        offset += 4 * (encoder_count + 1)
        projector_dims = [int(v) for v in np.frombuffer(data, dtype="<u4", count=projector_count + 1, offset=offset)]
        offset += 4 * (projector_count + 1)

        parameters = []
        for dims in (encoder_dims, projector_dims):
            for fan_in, fan_out in zip(dims[:-1], dims[1:]):
                weight = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=offset).reshape(fan_in, fan_out)
                offset += 8 * fan_in * fan_out
                bias = np.frombuffer(data, dtype="<f8", count=fan_out, offset=offset)
                offset += 8 * fan_out
                parameters += [weight.astype(np.float64), bias.astype(np.float64)]
    except ValueError as e:
        raise InvalidInputError(f"Checkpoint '{path}' is truncated or corrupt") from e

    if offset != len(data):
        raise InvalidInputError(f"Checkpoint '{path}' has {len(data) - offset} trailing bytes")

    layers = [Layer(parameters[2 * i], parameters[2 * i + 1]) for i in range(len(parameters) // 2)]
    return MlpModel(tuple(layers[:encoder_count]), tuple(layers[encoder_count:]), activation)
