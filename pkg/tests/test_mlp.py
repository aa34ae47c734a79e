import numpy as np
import pytest

from conftest import central_difference
from dimensionality_lab.core.errors import InvalidInputError, ShapeError, TrainingDivergenceError
from dimensionality_lab.core.mlp import (CHECKPOINT_MAGIC, AdamState, Layer, MlpModel, adam_step, adam_update, backward, forward, forward_values,
                                         init_mlp, load_checkpoint, represent, represent_values, save_checkpoint)


def zero_layer(fan_in: int, fan_out: int) -> Layer:
    return Layer(np.zeros((fan_in, fan_out)), np.zeros(fan_out))


class TestModel:

    def test_init_dimensions(self):
        model = init_mlp(25, [20] * 5, [5, 5], seed=0)
        assert model.encoder_dims == [25, 20, 20, 20, 20, 20]
        assert model.projector_dims == [20, 5, 5]
        assert (model.input_dim, model.representation_dim, model.embedding_dim) == (25, 20, 5)
        assert len(model.parameters()) == 14

    def test_init_bounds(self):
        model = init_mlp(16, [8], [4], seed=1)
        assert np.all(np.abs(model.encoder_layers[0].weight) <= 0.25)
        assert np.all(np.abs(model.projector_layers[0].weight) <= 1 / np.sqrt(8))

    def test_broken_chain(self):
        with pytest.raises(ShapeError):
            MlpModel((zero_layer(3, 4),), (zero_layer(5, 2),))

    def test_non_finite_parameters(self):
        layer = Layer(np.array([[np.nan]]), np.zeros(1))
        with pytest.raises(InvalidInputError):
            MlpModel((layer,), (zero_layer(1, 1),))


class TestForward:

    def test_zero_network(self, rng):
        model = MlpModel((zero_layer(3, 4), zero_layer(4, 4)), (zero_layer(4, 2),))
        R, Z, _ = forward(model, rng.standard_normal((5, 3)))
        np.testing.assert_array_equal(R.values, np.zeros((5, 4)))
        np.testing.assert_array_equal(Z.values, np.zeros((5, 2)))

    def test_identity_network(self, rng):
        identity = Layer(np.eye(3), np.zeros(3))
        X = rng.standard_normal((6, 3))
        _, Z, _ = forward(MlpModel((identity,), (identity,), "identity"), X)
        np.testing.assert_array_equal(Z.values, X)

    def test_cache_free_path_matches(self, rng):
        model = init_mlp(6, [8, 8], [4], seed=2)
        X = rng.standard_normal((10, 6))
        R, Z, _ = forward(model, X)
        R_eval, Z_eval = represent(model, X)
        np.testing.assert_allclose(R.values, R_eval.values, atol=1e-12)
        np.testing.assert_allclose(Z.values, Z_eval.values, atol=1e-12)

    def test_unchecked_path_matches(self, rng):
        model = init_mlp(6, [8, 8], [4], seed=2)
        X = rng.standard_normal((10, 6))
        R, Z, _ = forward(model, X)
        R_raw, Z_raw, _ = forward_values(model, X)
        np.testing.assert_array_equal(R.values, R_raw)
        np.testing.assert_array_equal(Z.values, Z_raw)

    def test_unchecked_path_passes_overflow_through(self):
        huge = Layer(np.full((2, 2), 1e200), np.zeros(2))
        model = MlpModel((huge, huge), (huge,))
        _, Z = represent_values(model, np.ones((3, 2)))
        assert not np.all(np.isfinite(Z))

    def test_representation_is_linear_output(self, rng):
        model = init_mlp(3, [5], [2], seed=3)
        X = rng.standard_normal((4, 3))
        R, _, _ = forward(model, X)
        layer = model.encoder_layers[0]
        np.testing.assert_allclose(R.values, X @ layer.weight + layer.bias)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            forward(init_mlp(4, [3], [2], seed=0), rng.standard_normal((5, 3)))


class TestBackward:

    def test_matches_finite_differences(self, rng):
        model = init_mlp(3, [5, 4], [3, 2], seed=4)
        X = rng.standard_normal((6, 3))
        weights = rng.standard_normal((6, 2))

        _, _, cache = forward(model, X)
        grads = backward(model, cache, weights)

        parameters = model.parameters()
        for index, parameter in enumerate(parameters):
            def objective(value: np.ndarray) -> float:
                updated = list(parameters)
                updated[index] = value
                return float(np.sum(represent(model.with_parameters(updated), X)[1].values * weights))

            numeric = central_difference(objective, np.array(parameter), step=1e-6)
            np.testing.assert_allclose(grads[index], numeric, atol=1e-6, rtol=1e-5)

    def test_gradient_shape_mismatch(self, rng):
        model = init_mlp(3, [4], [2], seed=0)
        _, _, cache = forward(model, rng.standard_normal((5, 3)))
        with pytest.raises(ShapeError):
            backward(model, cache, np.zeros((5, 3)))


def reference_adam(x: float, steps: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> list[float]:
    """
    Scalar Adam on f(x) = x^2 / 2
    """
    m = v = 0.0
    trajectory = []
    for t in range(1, steps + 1):
        g = x
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        x = x - lr * (m / (1 - beta1 ** t)) / ((v / (1 - beta2 ** t)) ** 0.5 + eps)
        trajectory.append(x)
    return trajectory


class TestAdam:

    def test_zero_gradient(self, rng):
        parameters = [rng.standard_normal((3, 2)), rng.standard_normal(2)]
        updated, state = adam_update(parameters, [np.zeros((3, 2)), np.zeros(2)], AdamState.zeros_like(parameters), lr=0.1)
        for before, after in zip(parameters, updated):
            np.testing.assert_array_equal(before, after)
        assert state.step == 1

    def test_first_step_moves_by_lr(self):
        updated, _ = adam_update([np.array([1.0])], [np.array([3.0])], AdamState.zeros_like([np.array([1.0])]), lr=0.01)
        assert updated[0][0] == pytest.approx(1.0 - 0.01, abs=1e-9)

    def test_matches_reference_recurrence(self):
        parameters = [np.array([1.0])]
        state = AdamState.zeros_like(parameters)
        trajectory = []
        for _ in range(100):
            parameters, state = adam_update(parameters, [parameters[0].copy()], state, lr=0.1)
            trajectory.append(parameters[0][0])
        np.testing.assert_allclose(trajectory, reference_adam(1.0, 100, 0.1), atol=1e-10)

    def test_zero_learning_rate(self, rng):
        model = init_mlp(3, [4], [2], seed=5)
        grads = [rng.standard_normal(p.shape) for p in model.parameters()]
        updated, _ = adam_step(model, grads, AdamState.zeros_like(model.parameters()), lr=0.0)
        for before, after in zip(model.parameters(), updated.parameters()):
            np.testing.assert_array_equal(before, after)

    def test_non_finite_gradient(self):
        parameters = [np.array([1.0, 2.0])]
        with pytest.raises(TrainingDivergenceError):
            adam_update(parameters, [np.array([np.inf, 0.0])], AdamState.zeros_like(parameters), lr=0.1)

    def test_overflowing_update(self):
        parameters = [np.array([-1e308])]
        with pytest.raises(TrainingDivergenceError):
            adam_update(parameters, [np.array([1.0])], AdamState.zeros_like(parameters), lr=1e308)

    def test_step_keeps_layer_structure(self, rng):
        model = init_mlp(3, [4, 4], [2], seed=6)
        grads = [rng.standard_normal(p.shape) for p in model.parameters()]
        updated, _ = adam_step(model, grads, AdamState.zeros_like(model.parameters()), lr=0.01)
        checked = model.with_parameters(updated.parameters())

        assert (updated.encoder_dims, updated.projector_dims, updated.activation) == (checked.encoder_dims, checked.projector_dims, checked.activation)
        for before, after in zip(checked.parameters(), updated.parameters()):
            np.testing.assert_array_equal(before, after)

    def test_gradient_count_mismatch(self):
        parameters = [np.zeros(2), np.zeros(3)]
        with pytest.raises(ShapeError):
            adam_update(parameters, [np.zeros(2)], AdamState.zeros_like(parameters), lr=0.1)


class TestCheckpoint:

    def test_roundtrip(self, tmp_path):
        model = init_mlp(7, [6, 5], [4, 3], seed=8)
        save_checkpoint(model, tmp_path / "model.bin")
        loaded = load_checkpoint(tmp_path / "model.bin")
        assert loaded.encoder_dims == model.encoder_dims
        assert loaded.projector_dims == model.projector_dims
        for before, after in zip(model.parameters(), loaded.parameters()):
            np.testing.assert_array_equal(before, after)

    def test_layout(self, tmp_path):
        model = MlpModel((Layer(np.arange(6.0).reshape(2, 3), np.array([7.0, 8.0, 9.0])),), (Layer(np.ones((3, 1)), np.zeros(1)),))
        save_checkpoint(model, tmp_path / "model.bin")
        data = (tmp_path / "model.bin").read_bytes()

        assert data[:8] == CHECKPOINT_MAGIC
        np.testing.assert_array_equal(np.frombuffer(data, dtype="<u4", count=6, offset=8), [1, 1, 2, 3, 3, 1])
        # row-major weight then bias of the first layer
        np.testing.assert_array_equal(np.frombuffer(data, dtype="<f8", count=9, offset=32), [0, 1, 2, 3, 4, 5, 7, 8, 9])
        assert len(data) == 32 + 8 * (6 + 3 + 3 + 1)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "model.bin").write_bytes(b"NOTMODEL" + bytes(16))
        with pytest.raises(InvalidInputError):
            load_checkpoint(tmp_path / "model.bin")

    def test_truncated(self, tmp_path):
        save_checkpoint(init_mlp(3, [2], [2], seed=0), tmp_path / "model.bin")
        data = (tmp_path / "model.bin").read_bytes()
        (tmp_path / "model.bin").write_bytes(data[:-8])
        with pytest.raises(InvalidInputError):
            load_checkpoint(tmp_path / "model.bin")
