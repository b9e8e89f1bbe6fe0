import numpy as np
import pytest

import pvfault.layers
from pvfault.gradcheck import model_gradcheck, numerical_gradient, rel_error
from pvfault.models import build_model


def small_batch(seed=0, n=2, hw=16):
    rng = np.random.default_rng(seed)
    images = rng.random((n, 3, hw, hw))
    labels = rng.integers(0, 2, size=n)
    return images, labels


class TestHelpers:
    def test_numerical_gradient_of_quadratic(self):
        x = np.array([1.0, -2.0, 0.5])
        grad = numerical_gradient(lambda v: float(np.sum(v**2)), x)
        assert np.allclose(grad, 2 * x, atol=1e-8)

    def test_rel_error_detects_sign_flip(self):
        assert rel_error(0.01, -0.01) > 0.9

    def test_rel_error_forgives_fd_noise_near_zero(self):
        assert rel_error(0.0, 5e-11) < 1e-4


class TestModelGradcheck:
    def test_requires_float64(self):
        model = build_model("ablated-2conv", 2, (3, 16, 16), dtype=np.float32)
        images, labels = small_batch()
        with pytest.raises(ValueError, match="float64"):
            model_gradcheck(model, images, labels)

    def test_small_model_passes(self):
        model = build_model("ablated-2conv", 2, (3, 16, 16), seed=1, dtype=np.float64)
        images, labels = small_batch(seed=2)
        report = model_gradcheck(model, images, labels, tolerance=1e-4, samples_per_tensor=12)
        assert report.passed, report.format_lines()
        assert set(report.per_tensor) == {name for name, _ in model.param_items()}

    def test_report_covers_every_parameter_tensor(self):
        model = build_model("espinosa-binary", 2, (3, 16, 16), seed=3, dtype=np.float64)
        images, labels = small_batch(seed=4)
        report = model_gradcheck(model, images, labels, samples_per_tensor=6)
        assert len(report.per_tensor) == 10  # 4 convs x (weight, bias) + fc x 2
        assert report.worst == max(report.per_tensor.values())

    def test_corrupted_conv_backward_fails(self, monkeypatch):
        true_backward = pvfault.layers.conv2d_backward

        def sign_flipped(x, kernels, geom, grad_out):
            dx, dw, db = true_backward(x, kernels, geom, grad_out)
            return dx, -dw, db

        monkeypatch.setattr(pvfault.layers, "conv2d_backward", sign_flipped)
        model = build_model("ablated-2conv", 2, (3, 16, 16), seed=5, dtype=np.float64)
        images, labels = small_batch(seed=6)
        report = model_gradcheck(model, images, labels, tolerance=1e-4, samples_per_tensor=12)
        assert not report.passed
        assert any(name.startswith("conv") for name, err in report.per_tensor.items()
                   if err > 1e-4)

    def test_zero_tolerance_always_fails(self):
        model = build_model("ablated-2conv", 2, (3, 16, 16), seed=7, dtype=np.float64)
        images, labels = small_batch(seed=8)
        report = model_gradcheck(model, images, labels, tolerance=0.0, samples_per_tensor=4)
        assert not report.passed

    def test_format_lines_mention_worst_and_verdict(self):
        model = build_model("ablated-2conv", 2, (3, 16, 16), seed=9, dtype=np.float64)
        images, labels = small_batch(seed=10)
        report = model_gradcheck(model, images, labels, samples_per_tensor=4)
        lines = report.format_lines()
        assert lines[-1].startswith("PASS" if report.passed else "FAIL")
        assert len(lines) == len(report.per_tensor) + 1
