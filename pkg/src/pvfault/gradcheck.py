"""Finite-difference verification of the hand-derived backward passes.

The check perturbs sampled parameter coordinates of a float64 model and
compares the loss slope from central differences against the analytical
gradient. Relative error is measured as

    |analytic - numeric| / (|analytic| + |numeric| + 1e-6)

so finite-difference noise on near-zero gradients cannot register as a
spurious failure while sign or scale bugs still push the ratio toward 1.

Two practicalities:

* Checking every coordinate of every tensor is far too slow for the larger
  architectures, so a fixed-size random sample of coordinates per tensor is
  used; sampling is seeded and therefore reproducible.

* The loss surface has kinks (ReLU boundaries, max-pool argmax switches).
  A central difference whose interval straddles a kink measures the average
  of two different slopes, not the derivative, even though the analytic
  gradient at the point is exact. Kink points are excluded: each coordinate
  is probed at both eps and eps/2, and coordinates whose two difference
  quotients disagree are discarded and resampled. The detector never looks
  at the analytic gradient, so a wrong backward pass cannot earn exclusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import cross_entropy, softmax_cross_entropy_grad
from .models import Model

REL_ERR_GUARD = 1e-6
# difference quotients at eps and eps/2 agree to ~1e-9 on smooth coordinates;
# a kink inside the interval pushes the disagreement orders of magnitude higher
KINK_DISAGREEMENT = 1e-6


def numerical_gradient(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function, elementwise over x (float64)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f(x)
        flat[i] = orig - eps
        f_minus = f(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / (abs(analytic) + abs(numeric) + REL_ERR_GUARD)


@dataclass
class GradcheckReport:
    per_tensor: dict[str, float]  # worst sampled relative error per parameter tensor
    worst: float
    tolerance: float
    passed: bool
    checked: int = 0  # coordinates compared
    skipped: int = 0  # coordinates discarded for straddling a kink

    def format_lines(self) -> list[str]:
        lines = [
            f"{name:24s} worst rel err {err:.3e}  {'ok' if err < self.tolerance else 'FAIL'}"
            for name, err in self.per_tensor.items()
        ]
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(
            f"{verdict}: worst {self.worst:.3e} vs tolerance {self.tolerance:.1e} "
            f"({self.checked} coordinates checked, {self.skipped} near kinks skipped)"
        )
        return lines


def model_gradcheck(model: Model, images: np.ndarray, labels: np.ndarray,
                    tolerance: float = 1e-4, eps: float = 1e-5,
                    samples_per_tensor: int = 24, seed: int = 0) -> GradcheckReport:
    """Compare analytical parameter gradients of the mean cross-entropy loss
    against central finite differences on a small batch.

    The model must be built with dtype float64; float32 storage cannot
    resolve slopes at eps = 1e-5.
    """
    if model.dtype != np.float64:
        raise ValueError("gradient checking requires a float64 model")
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)

    def loss() -> float:
        return cross_entropy(model.forward(images, train=True), labels)

    probs = model.forward(images, train=True)
    model.backward(softmax_cross_entropy_grad(probs, labels))
    analytic = {name: g.copy() for name, g in model.grad_items()}

    def central_difference(flat, i, h) -> float:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = loss()
        flat[i] = orig - h
        f_minus = loss()
        flat[i] = orig
        return (f_plus - f_minus) / (2.0 * h)

    rng = np.random.default_rng(seed)
    per_tensor: dict[str, float] = {}
    checked = 0
    skipped = 0
    for name, param in model.param_items():
        flat = param.reshape(-1)
        target = min(samples_per_tensor, flat.size)
        worst = 0.0
        clean = 0
        for i in rng.permutation(flat.size):
            if clean >= target:
                break
            d_full = central_difference(flat, i, eps)
            d_half = central_difference(flat, i, eps / 2.0)
            if rel_error(d_full, d_half) > KINK_DISAGREEMENT:
                skipped += 1  # interval straddles a ReLU/pool kink
                continue
            clean += 1
            checked += 1
            worst = max(worst, rel_error(float(analytic[name].reshape(-1)[i]), d_full))
        per_tensor[name] = worst

    worst = max(per_tensor.values())
    return GradcheckReport(
        per_tensor=per_tensor,
        worst=worst,
        tolerance=tolerance,
        passed=worst < tolerance,
        checked=checked,
        skipped=skipped,
    )
