import numpy as np
import pytest

from affectsteer import nn
from affectsteer.nn import AdamState, DenseLayer, DimensionError, DropoutSpec, Mlp

from conftest import central_diff, rel_err


def oracle_forward(model, x):
    """Independent float64 forward pass (per-layer W @ a loop)."""
    a = np.asarray(x, dtype=np.float64)
    n = len(model.layers)
    for i, layer in enumerate(model.layers):
        z = layer.weights.astype(np.float64) @ a + layer.bias.astype(np.float64)
        a = np.maximum(z, 0.0) if i < n - 1 else z
    return a


def zero_mlp(dims):
    return Mlp(
        [
            DenseLayer(np.zeros((o, i), dtype=np.float32), np.zeros(o, dtype=np.float32))
            for i, o in zip(dims, dims[1:])
        ]
    )


class TestForward:
    def test_zero_network(self):
        model = zero_mlp([512, 64, 32, 3])
        out = nn.mlp_forward(model, np.random.default_rng(0).normal(size=512))
        assert np.array_equal(out, np.zeros(3, dtype=np.float32))

    def test_identity_single_layer(self):
        model = Mlp([DenseLayer(np.eye(3, 5, dtype=np.float32), np.zeros(3))])
        e1 = np.zeros(5, dtype=np.float32)
        e1[0] = 1.0
        assert np.array_equal(nn.mlp_forward(model, e1), e1[:3])

    def test_toy_model_matches_hand_rolled_oracle(self, rng):
        model = nn.init_mlp([4, 3, 3], seed=7)
        x = np.array([1.0, -1.0, 0.5, 2.0], dtype=np.float32)
        out = nn.mlp_forward(model, x)
        np.testing.assert_allclose(out, oracle_forward(model, x), rtol=1e-5, atol=1e-6)

    def test_batch_matches_per_sample(self, rng):
        model = nn.init_mlp([6, 64, 32, 3], seed=1)
        xs = rng.normal(size=(10, 6)).astype(np.float32)
        batch = nn.mlp_forward(model, xs)
        for i in range(10):
            np.testing.assert_allclose(
                batch[i], nn.mlp_forward(model, xs[i]), rtol=1e-5, atol=1e-6
            )

    def test_dimension_mismatch_names_dims(self):
        model = nn.init_mlp([8, 4, 3], seed=0)
        with pytest.raises(DimensionError, match="5.*8"):
            nn.mlp_forward(model, np.zeros(5))

    def test_forward_deterministic_with_dropout_seed(self, rng):
        model = nn.init_mlp([8, 64, 32, 3], seed=0)
        x = rng.normal(size=8).astype(np.float32)
        d = DropoutSpec(0.2, seed=99)
        a = nn.mlp_forward(model, x, d)
        b = nn.mlp_forward(model, x, DropoutSpec(0.2, seed=99))
        assert np.array_equal(a, b)

    def test_dropout_expectation_matches_undropped(self, rng):
        # inverted dropout: E over masks equals the undropped activation
        model = nn.init_mlp([6, 16, 3], seed=3)
        x = rng.normal(size=6).astype(np.float32)
        batch = np.repeat(x[None, :], 100_000, axis=0)
        dropped = nn.mlp_forward(model, batch, DropoutSpec(0.2, seed=5))
        clean = nn.mlp_forward(model, x)
        scale = np.maximum(np.abs(clean), 1e-3)
        assert np.all(np.abs(dropped.mean(axis=0) - clean) / scale < 0.01)


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self, rng):
        model = nn.init_mlp([5, 8, 3], seed=2)
        x = rng.normal(size=5).astype(np.float32)
        param_grads, input_grad = nn.mlp_backward(model, x, np.zeros(3))
        assert all(np.all(g == 0) for g in param_grads)
        assert np.all(input_grad == 0)

    def test_single_linear_layer_analytic(self, rng):
        w = rng.normal(size=(3, 4)).astype(np.float32)
        model = Mlp([DenseLayer(w, np.zeros(3))])
        x = rng.normal(size=4).astype(np.float32)
        g = rng.normal(size=3).astype(np.float32)
        param_grads, input_grad = nn.mlp_backward(model, x, g)
        np.testing.assert_allclose(input_grad, w.T @ g, rtol=1e-6)
        np.testing.assert_allclose(param_grads[0], np.outer(g, x), rtol=1e-6)
        np.testing.assert_allclose(param_grads[1], g, rtol=1e-6)

    def test_gradients_match_finite_differences(self, rng):
        model = nn.init_mlp([6, 8, 5, 3], seed=11)
        for probe in range(20):
            x = rng.normal(size=6).astype(np.float32)
            u = rng.normal(size=3).astype(np.float32)

            def f_of_input(xv):
                return float(u.astype(np.float64) @ oracle_forward(model, xv))

            _, input_grad = nn.mlp_backward(model, x, u)
            fd = central_diff(f_of_input, x.astype(np.float64))
            assert rel_err(input_grad, fd) < 1e-4, f"probe {probe}"

    def test_param_gradients_match_finite_differences(self, rng):
        model = nn.init_mlp([4, 6, 3], seed=13)
        x = rng.normal(size=4).astype(np.float32)
        u = rng.normal(size=3).astype(np.float32)
        param_grads, _ = nn.mlp_backward(model, x, u)
        for pi, p in enumerate(model.parameters()):
            orig = p.copy()

            def f_of_param(flat):
                # all-float64 forward so the perturbation is not rounded away
                params = [q.astype(np.float64) for q in model.parameters()]
                params[pi] = flat.reshape(orig.shape)
                a = x.astype(np.float64)
                n = len(model.layers)
                for i in range(n):
                    z = params[2 * i] @ a + params[2 * i + 1]
                    a = np.maximum(z, 0.0) if i < n - 1 else z
                return float(u.astype(np.float64) @ a)

            fd = central_diff(f_of_param, orig.astype(np.float64).ravel())
            assert rel_err(param_grads[pi].ravel(), fd) < 1e-4

    def test_locally_linear_under_upstream_scaling(self, rng):
        # away from ReLU kinks, doubling the upstream grad exactly doubles grads
        model = nn.init_mlp([5, 8, 3], seed=4)
        x = rng.normal(size=5).astype(np.float32)
        g = rng.normal(size=3).astype(np.float32)
        pg1, ig1 = nn.mlp_backward(model, x, g)
        pg2, ig2 = nn.mlp_backward(model, x, 2 * g)
        assert np.array_equal(ig2, 2 * ig1)
        assert all(np.array_equal(b, 2 * a) for a, b in zip(pg1, pg2))

    def test_batch_param_grads_sum_over_samples(self, rng):
        model = nn.init_mlp([4, 6, 3], seed=8)
        xs = rng.normal(size=(5, 4)).astype(np.float32)
        us = rng.normal(size=(5, 3)).astype(np.float32)
        batch_grads, batch_input = nn.mlp_backward(model, xs, us)
        acc = [np.zeros_like(p) for p in model.parameters()]
        for i in range(5):
            pg, ig = nn.mlp_backward(model, xs[i], us[i])
            np.testing.assert_array_equal(batch_input[i], ig)
            acc = [a + g for a, g in zip(acc, pg)]
        for a, b in zip(acc, batch_grads):
            np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = np.array([1.0, 2.0], dtype=np.float32)
        state = AdamState(lr=0.1)
        (out,) = nn.adam_step([p], [np.zeros_like(p)], state)
        assert np.array_equal(out, p)
        assert state.step_count == 1

    def test_first_step_moves_by_lr(self):
        # bias-corrected first step: p - lr * g/(|g| + eps') ~= p - lr
        p = np.array([1.0], dtype=np.float32)
        state = AdamState(lr=0.1)
        (out,) = nn.adam_step([p], [np.array([1.0], dtype=np.float32)], state)
        assert abs(out[0] - 0.9) < 1e-6

    def reference_scalar_adam(self, p, lr, steps):
        m = v = 0.0
        b1, b2, eps = 0.9, 0.999, 1e-8
        for t in range(1, steps + 1):
            g = 2 * p  # d/dp p^2
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            p = p - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        return p

    def test_quadratic_converges_and_matches_reference(self):
        p = np.array([1.0], dtype=np.float32)
        state = AdamState(lr=0.1)
        for _ in range(100):
            (p,) = nn.adam_step([p], [2 * p], state)
        ref = self.reference_scalar_adam(1.0, 0.1, 100)
        assert abs(p[0]) < 0.05
        assert abs(p[0] - ref) < 1e-3

    def test_shape_mismatch(self):
        state = AdamState()
        with pytest.raises(DimensionError):
            nn.adam_step([np.zeros(3)], [np.zeros(4)], state)


class TestMse:
    def test_equal_is_zero(self, rng):
        v = rng.normal(size=7)
        loss, grad = nn.mse_loss(v, v)
        assert loss == 0.0
        assert np.all(grad == 0)

    def test_arithmetic_case(self):
        loss, grad = nn.mse_loss([1.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        assert loss == pytest.approx(1 / 3)
        np.testing.assert_allclose(grad, [2 / 3, 0, 0], rtol=1e-6)

    def test_grad_matches_finite_differences(self, rng):
        pred = rng.normal(size=6)
        target = rng.normal(size=6)
        _, grad = nn.mse_loss(pred, target)
        fd = central_diff(lambda p: nn.mse_loss(p.astype(np.float64), target)[0], pred)
        assert rel_err(grad, fd) < 1e-3

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            nn.mse_loss([1.0], [1.0, 2.0])
