"""Base classifier: forward values, exact gradients, flattening, serialization."""

import math

import numpy as np
import pytest

from fairsmooth.model import (
    Architecture,
    backward,
    backward_many,
    bce_loss,
    default_architecture,
    flatten_params,
    forward,
    forward_many,
    init_params,
    load_model,
    save_model,
    unflatten_params,
)


def finite_difference_gradient(arch, w, x, y, h=1e-5):
    """Central-difference oracle for the clamped cross-entropy loss."""
    grad = np.empty_like(w)
    for i in range(w.size):
        bump = np.zeros_like(w)
        bump[i] = h
        up = bce_loss(np.array([forward(arch, w + bump, x)]), np.array([y]))[0]
        down = bce_loss(np.array([forward(arch, w - bump, x)]), np.array([y]))[0]
        grad[i] = (up - down) / (2.0 * h)
    return grad


class TestForward:
    def test_zero_weights_sigmoid_gives_half(self):
        arch = Architecture(input_dim=3, hidden=(5, 4))
        w = np.zeros(arch.n_params)
        for x in (np.array([1.0, -2.0, 3.0]), np.array([100.0, 0.0, -7.0])):
            assert forward(arch, w, x) == 0.5

    def test_single_linear_layer_matches_sigmoid(self):
        # weights [1, 0], bias 0, x = [2, 5] -> sigmoid(2)
        arch = Architecture(input_dim=2, hidden=())
        w = np.array([1.0, 0.0, 0.0])
        value = forward(arch, w, np.array([2.0, 5.0]))
        assert value == pytest.approx(0.8807970779778823, abs=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_output_always_in_unit_interval(self, seed):
        gen = np.random.default_rng(seed)
        arch = Architecture(input_dim=4, hidden=(6, 3), activation="relu")
        w = gen.normal(scale=50.0, size=arch.n_params)  # huge weights on purpose
        x = gen.normal(scale=10.0, size=4)
        assert 0.0 <= forward(arch, w, x) <= 1.0

    def test_dimension_mismatch_reports_sizes(self):
        arch = Architecture(input_dim=3, hidden=(2,))
        w = np.zeros(arch.n_params)
        with pytest.raises(ValueError, match=r"expected n=3, got 2"):
            forward(arch, w, np.array([1.0, 2.0]))
        with pytest.raises(ValueError, match=rf"expected m={arch.n_params}, got 4"):
            forward(arch, np.zeros(4), np.array([1.0, 2.0, 3.0]))

    def test_forward_many_matches_forward(self):
        gen = np.random.default_rng(7)
        arch = Architecture(input_dim=3, hidden=(4,), activation="tanh")
        stack = gen.normal(size=(5, arch.n_params))
        xs = gen.normal(size=(6, 3))
        grid = forward_many(arch, stack, xs)
        for i in range(5):
            for j in range(6):
                assert grid[i, j] == pytest.approx(forward(arch, stack[i], xs[j]), abs=1e-12)

    def test_step_and_clipped_outputs(self):
        step = Architecture(input_dim=2, hidden=(), output="step", bias=False)
        assert forward(step, np.array([1.0, -1.0]), np.array([1.0, 0.0])) == 1.0
        assert forward(step, np.array([-1.0, 0.0]), np.array([1.0, 0.0])) == 0.0
        assert forward(step, np.array([0.0, 0.0]), np.array([1.0, 1.0])) == 1.0  # tie
        clipped = Architecture(input_dim=1, hidden=(), output="clipped-linear", bias=False)
        assert forward(clipped, np.array([0.25]), np.array([2.0])) == 0.5
        assert forward(clipped, np.array([3.0]), np.array([2.0])) == 1.0


class TestBackward:
    def test_zero_gradient_at_stationary_point(self):
        # clipped-linear head saturated at the label: output equals y exactly
        arch = Architecture(input_dim=2, hidden=(), output="clipped-linear", bias=False)
        w = np.array([2.0, 0.0])
        g = backward(arch, w, np.array([1.0, 1.0]), 1.0)
        assert np.linalg.norm(g) <= 1e-8

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_finite_differences(self, seed):
        gen = np.random.default_rng(seed)
        activation = ("relu", "tanh", "sigmoid")[seed % 3]
        arch = Architecture(input_dim=2, hidden=(3,), activation=activation)
        w = gen.normal(size=arch.n_params)
        x = gen.normal(size=2)
        y = float(seed % 2)
        g = backward(arch, w, x, y)
        fd = finite_difference_gradient(arch, w, x, y)
        rel = np.abs(g - fd) / np.maximum.reduce([np.abs(fd), np.abs(g), np.full_like(g, 1e-8)])
        assert rel.max() <= 1e-4

    def test_two_calls_bitwise_identical(self):
        gen = np.random.default_rng(5)
        arch = default_architecture(4)
        w = gen.normal(size=arch.n_params)
        x = gen.normal(size=4)
        g1 = backward(arch, w, x, 1.0)
        g2 = backward(arch, w, x, 1.0)
        assert np.array_equal(g1, g2)

    def test_bad_label_rejected(self):
        arch = Architecture(input_dim=2, hidden=())
        with pytest.raises(ValueError, match="labels must be 0 or 1"):
            backward(arch, np.zeros(3), np.array([1.0, 2.0]), 0.5)

    def test_step_output_has_no_gradient(self):
        arch = Architecture(input_dim=2, hidden=(), output="step", bias=False)
        with pytest.raises(ValueError, match="no usable gradient"):
            backward(arch, np.ones(2), np.array([1.0, 0.0]), 1.0)

    def test_unknown_loss_rejected(self):
        arch = Architecture(input_dim=2, hidden=())
        with pytest.raises(ValueError, match="unsupported loss"):
            backward(arch, np.zeros(3), np.array([1.0, 2.0]), 1.0, loss="hinge")

    def test_empty_batch_rejected(self):
        arch = Architecture(input_dim=2, hidden=())
        with pytest.raises(ValueError, match="empty batch"):
            backward_many(arch, np.zeros((1, 3)), np.empty((0, 2)), np.empty(0))

    def test_batch_gradient_is_mean_of_singles(self):
        gen = np.random.default_rng(11)
        arch = Architecture(input_dim=3, hidden=(4,), activation="tanh")
        w = gen.normal(size=arch.n_params)
        xs = gen.normal(size=(7, 3))
        ys = (gen.random(7) > 0.5).astype(float)
        batch_grad, _ = backward_many(arch, w[None, :], xs, ys)
        singles = np.mean([backward(arch, w, x, y) for x, y in zip(xs, ys)], axis=0)
        np.testing.assert_allclose(batch_grad[0], singles, rtol=1e-12, atol=1e-15)


class TestParameterLayout:
    @pytest.mark.parametrize(
        "arch",
        [
            Architecture(input_dim=3, hidden=()),
            Architecture(input_dim=5, hidden=(4,), bias=False),
            Architecture(input_dim=2, hidden=(3, 2), activation="sigmoid"),
            default_architecture(18),
        ],
    )
    def test_flatten_unflatten_round_trip(self, arch):
        gen = np.random.default_rng(0)
        w = gen.normal(size=arch.n_params)
        layers = unflatten_params(arch, w)
        back = flatten_params(arch, layers)
        assert np.array_equal(w, back)

    def test_param_count(self):
        arch = default_architecture(18)
        assert arch.n_params == 18 * 32 + 32 + 32 * 16 + 16 + 16 * 1 + 1

    def test_shared_init_is_deterministic(self):
        arch = default_architecture(6)
        w1 = init_params(arch, 42)
        w2 = init_params(arch, 42)
        assert np.array_equal(w1, w2)
        assert not np.array_equal(w1, init_params(arch, 43))


class TestSerialization:
    def test_round_trip_is_exact(self, tmp_path):
        gen = np.random.default_rng(3)
        arch = Architecture(input_dim=4, hidden=(5, 2), activation="tanh")
        w = gen.normal(size=arch.n_params)
        w[0] = 1.0 / 3.0  # not exactly representable in decimal
        path = tmp_path / "model.txt"
        save_model(path, arch, w)
        arch2, w2 = load_model(path)
        assert arch2 == arch
        assert np.array_equal(w, w2)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.txt"
        path.write_text("not a model\n")
        with pytest.raises(ValueError, match="not a fairsmooth"):
            load_model(path)

    def test_rejects_truncated_file(self, tmp_path):
        arch = Architecture(input_dim=2, hidden=())
        path = tmp_path / "model.txt"
        save_model(path, arch, np.zeros(arch.n_params))
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(ValueError, match="parameter lines"):
            load_model(path)


class TestValidation:
    def test_bad_architecture_rejected(self):
        with pytest.raises(ValueError, match="input_dim"):
            Architecture(input_dim=0)
        with pytest.raises(ValueError, match="activation"):
            Architecture(input_dim=2, activation="swish")
        with pytest.raises(ValueError, match="output"):
            Architecture(input_dim=2, output="linear")

    def test_non_finite_params_rejected(self):
        arch = Architecture(input_dim=2, hidden=())
        w = np.zeros(arch.n_params)
        w[0] = math.nan
        with pytest.raises(ValueError, match="non-finite"):
            forward(arch, w, np.array([1.0, 2.0]))
