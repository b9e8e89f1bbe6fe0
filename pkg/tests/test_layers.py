import numpy as np
import pytest

from pvfault.errors import ShapeError
from pvfault.layers import (
    BatchNorm2d,
    Conv2d,
    Dense,
    Flatten,
    MaxPool2d,
    ReLU,
    cross_entropy,
    softmax,
    softmax_cross_entropy_grad,
)

from reference import max_rel_error, numerical_gradient


def _scalar_loss(layer, x, proj):
    return float((layer.forward(x, train=True) * proj).sum())


class TestReLU:
    def test_definition(self):
        out = ReLU().forward(np.array([[-1.0, 0.0, 2.0]]))
        assert np.array_equal(out, np.array([[0.0, 0.0, 2.0]]))

    def test_all_negative(self):
        out = ReLU().forward(-np.abs(np.random.default_rng(0).normal(size=(3, 4))) - 0.1)
        assert not out.any()

    def test_backward_masking_and_kink(self):
        layer = ReLU()
        x = np.array([[-2.0, 0.0, 3.0]])
        layer.forward(x, train=True)
        g = layer.backward(np.array([[10.0, 10.0, 10.0]]))
        # pass where x > 0, zero where x < 0, subgradient 0 at exactly 0
        assert np.array_equal(g, np.array([[0.0, 0.0, 10.0]]))

    def test_backward_matches_finite_differences_off_kink(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(3, 5)) + 0.05  # continuous, no exact zeros
        proj = rng.normal(size=(3, 5))
        layer = ReLU()
        layer.forward(x, train=True)
        analytic = layer.backward(proj)
        numeric = numerical_gradient(lambda v: _scalar_loss(ReLU(), v, proj), x)
        assert max_rel_error(analytic, numeric) < 1e-4

    def test_backward_without_forward_raises(self):
        with pytest.raises(RuntimeError):
            ReLU().backward(np.ones((1, 1)))


class TestDense:
    def test_identity_weights(self):
        rng = np.random.default_rng(2)
        layer = Dense(4, 4, rng, dtype=np.float64)
        layer.weight[...] = np.eye(4)
        layer.bias[...] = 0.0
        x = rng.normal(size=(3, 4))
        assert np.allclose(layer.forward(x), x, rtol=0, atol=0)

    def test_zero_input_gives_bias(self):
        rng = np.random.default_rng(3)
        layer = Dense(4, 2, rng, dtype=np.float64)
        layer.bias[...] = [0.5, -1.5]
        out = layer.forward(np.zeros((3, 4)))
        assert np.array_equal(out, np.tile([0.5, -1.5], (3, 1)))

    def test_feature_mismatch(self):
        layer = Dense(4, 2, np.random.default_rng(4))
        with pytest.raises(ShapeError):
            layer.forward(np.zeros((3, 5)))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        layer = Dense(6, 3, rng, dtype=np.float64)
        x = rng.normal(size=(4, 6))
        proj = rng.normal(size=(4, 3))

        layer.forward(x, train=True)
        dx = layer.backward(proj)
        grads = layer.grads()

        numeric_dx = numerical_gradient(lambda v: _scalar_loss(layer, v, proj), x)
        assert max_rel_error(dx, numeric_dx) < 1e-4

        def loss_for_weight(w):
            layer.weight[...] = w
            return _scalar_loss(layer, x, proj)

        w0 = layer.weight.copy()
        numeric_dw = numerical_gradient(loss_for_weight, w0)
        layer.weight[...] = w0
        assert max_rel_error(grads["weight"], numeric_dw) < 1e-4

        def loss_for_bias(b):
            layer.bias[...] = b
            return _scalar_loss(layer, x, proj)

        b0 = layer.bias.copy()
        numeric_db = numerical_gradient(loss_for_bias, b0)
        layer.bias[...] = b0
        assert max_rel_error(grads["bias"], numeric_db) < 1e-4


class TestConv2dLayer:
    def test_forward_backward_shapes(self):
        rng = np.random.default_rng(6)
        layer = Conv2d(3, 8, 3, rng, padding=1, dtype=np.float64)
        x = rng.normal(size=(2, 3, 8, 8))
        out = layer.forward(x, train=True)
        assert out.shape == (2, 8, 8, 8)
        dx = layer.backward(np.ones_like(out))
        assert dx.shape == x.shape
        assert layer.grads()["weight"].shape == layer.weight.shape

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        layer = Conv2d(2, 3, 3, rng, stride=1, padding=1, dtype=np.float64)
        x = rng.normal(size=(2, 2, 5, 5))
        proj = rng.normal(size=(2, 3, 5, 5))

        layer.forward(x, train=True)
        dx = layer.backward(proj)
        dw = layer.grads()["weight"]

        numeric_dx = numerical_gradient(lambda v: _scalar_loss(layer, v, proj), x)
        assert max_rel_error(dx, numeric_dx) < 1e-4

        def loss_for_weight(w):
            layer.weight[...] = w
            return _scalar_loss(layer, x, proj)

        w0 = layer.weight.copy()
        numeric_dw = numerical_gradient(loss_for_weight, w0)
        layer.weight[...] = w0
        assert max_rel_error(dw, numeric_dw) < 1e-4


class TestBatchNorm2d:
    def test_train_mode_normalizes(self):
        rng = np.random.default_rng(8)
        layer = BatchNorm2d(3, dtype=np.float64)
        x = rng.normal(loc=2.0, scale=3.0, size=(4, 3, 5, 5))
        out = layer.forward(x, train=True)
        mean = out.mean(axis=(0, 2, 3))
        var = out.var(axis=(0, 2, 3))
        assert np.abs(mean).max() < 1e-5
        assert np.abs(var - 1.0).max() < 1e-4

    def test_constant_channel_maps_to_zero(self):
        layer = BatchNorm2d(1, dtype=np.float64)
        x = np.full((2, 1, 3, 3), 5.0)
        out = layer.forward(x, train=True)
        assert np.abs(out).max() < 1e-2  # epsilon guard keeps 0/0 finite

    def test_running_stats_updated_with_momentum(self):
        layer = BatchNorm2d(1, momentum=0.9, dtype=np.float64)
        x = np.array([0.0, 2.0]).reshape(2, 1, 1, 1)
        layer.forward(x, train=True)
        # batch mean 1.0, biased batch var 1.0
        assert np.isclose(layer.running_mean[0], 0.9 * 0.0 + 0.1 * 1.0)
        assert np.isclose(layer.running_var[0], 0.9 * 1.0 + 0.1 * 1.0)
        assert (layer.running_var >= 0).all()

    def test_single_element_batch_rejected_in_train_mode(self):
        layer = BatchNorm2d(2)
        with pytest.raises(ShapeError, match="undefined"):
            layer.forward(np.zeros((1, 2, 1, 1), dtype=np.float32), train=True)

    def test_inference_is_bitwise_deterministic(self):
        rng = np.random.default_rng(9)
        layer = BatchNorm2d(3, dtype=np.float32)
        layer.forward(rng.normal(size=(4, 3, 4, 4)).astype(np.float32), train=True)
        x = rng.normal(size=(2, 3, 4, 4)).astype(np.float32)
        a = layer.forward(x, train=False)
        b = layer.forward(x, train=False)
        assert np.array_equal(a, b)

    def test_full_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        layer = BatchNorm2d(2, dtype=np.float64)
        layer.gamma[...] = rng.normal(size=2)
        layer.beta[...] = rng.normal(size=2)
        x = rng.normal(size=(3, 2, 4, 4))
        proj = rng.normal(size=(3, 2, 4, 4))

        layer.forward(x, train=True)
        dx = layer.backward(proj)
        grads = layer.grads()

        numeric_dx = numerical_gradient(lambda v: _scalar_loss(layer, v, proj), x)
        assert max_rel_error(dx, numeric_dx) < 1e-4

        g0 = layer.gamma.copy()

        def loss_for_gamma(g):
            layer.gamma[...] = g
            return _scalar_loss(layer, x, proj)

        numeric_dgamma = numerical_gradient(loss_for_gamma, g0)
        layer.gamma[...] = g0
        assert max_rel_error(grads["gamma"], numeric_dgamma) < 1e-4

        b0 = layer.beta.copy()

        def loss_for_beta(b):
            layer.beta[...] = b
            return _scalar_loss(layer, x, proj)

        numeric_dbeta = numerical_gradient(loss_for_beta, b0)
        layer.beta[...] = b0
        assert max_rel_error(grads["beta"], numeric_dbeta) < 1e-4


class TestPoolAndFlattenLayers:
    def test_pool_roundtrip_shapes(self):
        rng = np.random.default_rng(11)
        layer = MaxPool2d(2, 2)
        x = rng.normal(size=(2, 3, 6, 6))
        out = layer.forward(x, train=True)
        assert out.shape == (2, 3, 3, 3)
        dx = layer.backward(np.ones_like(out))
        assert dx.shape == x.shape

    def test_flatten_roundtrip(self):
        layer = Flatten()
        x = np.arange(24.0).reshape(2, 3, 2, 2)
        out = layer.forward(x, train=True)
        assert out.shape == (2, 12)
        back = layer.backward(out)
        assert np.array_equal(back, x)


class TestSoftmax:
    def test_uniform_logits(self):
        out = softmax(np.zeros((1, 4)))
        assert np.allclose(out, 0.25, rtol=0, atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(12)
        z = rng.normal(size=(3, 4))
        assert np.allclose(softmax(z), softmax(z + 123.456), rtol=0, atol=1e-12)

    def test_closed_form_two_class(self):
        out = softmax(np.array([[np.log(2.0), 0.0]]))
        assert np.allclose(out, [[2.0 / 3.0, 1.0 / 3.0]], rtol=0, atol=1e-12)

    @pytest.mark.parametrize("scale", [1.0, 1e2, 1e4])
    def test_rows_sum_to_one_at_large_magnitudes(self, scale):
        rng = np.random.default_rng(13)
        z = rng.normal(size=(8, 4)) * scale
        out = softmax(z)
        assert np.isfinite(out).all()
        assert (out >= 0).all()
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-6

    def test_needs_at_least_two_classes(self):
        with pytest.raises(ShapeError):
            softmax(np.zeros((3, 1)))


class TestCrossEntropy:
    def test_perfect_prediction(self):
        probs = np.array([[0.0, 1.0, 0.0, 0.0]])
        assert cross_entropy(probs, np.array([1])) == 0.0

    def test_uniform_four_class(self):
        probs = np.full((5, 4), 0.25)
        assert np.isclose(cross_entropy(probs, np.zeros(5, dtype=int)), np.log(4.0), atol=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="label out of range"):
            cross_entropy(np.full((1, 4), 0.25), np.array([4]))

    def test_probability_floor_keeps_loss_finite(self):
        probs = np.array([[1.0, 0.0]])
        loss = cross_entropy(probs, np.array([1]))
        assert np.isfinite(loss)

    def test_combined_softmax_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        logits = rng.normal(size=(3, 4))
        labels = np.array([0, 2, 3])

        probs = softmax(logits)
        analytic = softmax_cross_entropy_grad(probs, labels)
        numeric = numerical_gradient(lambda z: cross_entropy(softmax(z), labels), logits)
        assert max_rel_error(analytic, numeric) < 1e-4
