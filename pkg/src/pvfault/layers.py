"""Network layers with hand-derived forward/backward passes.

Each layer owns its parameters as plain numpy arrays and stashes whatever its
backward pass needs on the instance during a training-mode forward. A cache is
valid only for the immediately preceding training forward; backward consumes
it. Inference-mode forwards cache nothing and are pure functions of
(input, parameters, buffers).

ReLU uses subgradient 0 at exactly 0, so gradient checks must avoid points on
the kink (continuous random inputs make that a measure-zero event).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .ops import ConvGeometry, conv2d, conv2d_backward, matmul, maxpool2d, maxpool2d_backward


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    """He-style uniform init, gain tuned for ReLU: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base layer: parameter-free, shape-preserving by default."""

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Per-sample output shape for a per-sample input shape; raises ShapeError
        when the layer cannot accept the input."""
        return in_shape

    def _take_cache(self):
        cache = getattr(self, "_cache", None)
        if cache is None:
            raise RuntimeError(
                f"{type(self).__name__}.backward called without a preceding training-mode forward"
            )
        self._cache = None
        return cache


class Conv2d(Layer):
    """Convolution (cross-correlation) block over N,C,H,W batches."""

    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0,
                 dtype=np.float32):
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.geom = ConvGeometry(kernel=kernel_size, stride=stride, padding=padding)
        kh, kw = self.geom.kernel
        fan_in = self.in_channels * kh * kw
        self.weight = he_uniform(rng, (self.out_channels, self.in_channels, kh, kw), fan_in, dtype)
        self.bias = np.zeros(self.out_channels, dtype=dtype)
        self._cache = None
        self._grads: dict[str, np.ndarray] = {}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return self._grads

    def forward(self, x, train=False):
        if train:
            self._cache = x
        return conv2d(x, self.weight, self.bias, self.geom)

    def backward(self, grad_out):
        x = self._take_cache()
        grad_input, grad_weight, grad_bias = conv2d_backward(x, self.weight, self.geom, grad_out)
        self._grads = {"weight": grad_weight, "bias": grad_bias}
        return grad_input

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} input channels, got {c}")
        oh, ow = self.geom.out_extents(h, w)
        return (self.out_channels, oh, ow)


class BatchNorm2d(Layer):
    """Per-channel batch normalization with learned scale/shift.

    Training mode normalizes by the current batch's biased statistics and
    folds them into the running buffers: running = momentum * running +
    (1 - momentum) * batch. Inference mode normalizes by the running buffers
    only, which makes it a deterministic pure function.
    """

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        self.channels = int(channels)
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.gamma = np.ones(self.channels, dtype=dtype)
        self.beta = np.zeros(self.channels, dtype=dtype)
        self.running_mean = np.zeros(self.channels, dtype=dtype)
        self.running_var = np.ones(self.channels, dtype=dtype)
        self._cache = None
        self._grads: dict[str, np.ndarray] = {}

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return self._grads

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(
                f"batchnorm over {self.channels} channels cannot take input of shape {x.shape}"
            )

    def forward(self, x, train=False):
        self._check_input(x)
        n, c, h, w = x.shape
        gamma = self.gamma.reshape(1, c, 1, 1).astype(np.float64)
        beta = self.beta.reshape(1, c, 1, 1).astype(np.float64)
        if train:
            m = n * h * w
            if m < 2:
                raise ShapeError(
                    f"batch statistics undefined: N*H*W = {m} < 2 in training mode"
                )
            x64 = x.astype(np.float64)
            mean = x64.mean(axis=(0, 2, 3))
            var = x64.var(axis=(0, 2, 3))  # biased
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x64 - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
            out = gamma * xhat + beta
            self._cache = (xhat, inv_std, m)
            mom = self.momentum
            self.running_mean[...] = (mom * self.running_mean + (1 - mom) * mean).astype(
                self.running_mean.dtype
            )
            self.running_var[...] = (mom * self.running_var + (1 - mom) * var).astype(
                self.running_var.dtype
            )
        else:
            mean = self.running_mean.reshape(1, c, 1, 1)
            inv_std = 1.0 / np.sqrt(self.running_var.reshape(1, c, 1, 1) + self.eps)
            out = gamma * ((x - mean) * inv_std) + beta
        return out.astype(x.dtype)

    def backward(self, grad_out):
        xhat, inv_std, m = self._take_cache()
        c = self.channels
        g = grad_out.astype(np.float64)
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * self.gamma.reshape(1, c, 1, 1).astype(np.float64)
        sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = (inv_std.reshape(1, c, 1, 1) / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        dtype = grad_out.dtype
        self._grads = {"gamma": dgamma.astype(dtype), "beta": dbeta.astype(dtype)}
        return dx.astype(dtype)

    def out_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {in_shape[0]}")
        return in_shape


class ReLU(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x, train=False):
        if train:
            self._cache = x > 0
        return np.maximum(x, 0)

    def backward(self, grad_out):
        mask = self._take_cache()
        return grad_out * mask


class MaxPool2d(Layer):
    def __init__(self, window=2, stride=2):
        self.window = window
        self.stride = stride
        self._cache = None

    def forward(self, x, train=False):
        out, argmax = maxpool2d(x, self.window, self.stride)
        if train:
            self._cache = (argmax, x.shape)
        return out

    def backward(self, grad_out):
        argmax, in_shape = self._take_cache()
        return maxpool2d_backward(argmax, grad_out, in_shape)

    def out_shape(self, in_shape):
        c, h, w = in_shape
        wh = self.window if isinstance(self.window, int) else self.window[0]
        ww = self.window if isinstance(self.window, int) else self.window[1]
        sh = self.stride if isinstance(self.stride, int) else self.stride[0]
        sw = self.stride if isinstance(self.stride, int) else self.stride[1]
        if wh > h or ww > w:
            raise ShapeError(f"pool window {wh}x{ww} larger than input {h}x{w}")
        return (c, (h - wh) // sh + 1, (w - ww) // sw + 1)


class Flatten(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x, train=False):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        shape = self._take_cache()
        return grad_out.reshape(shape)

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Dense(Layer):
    """Fully connected layer: y = x @ W + b with W of shape [in, units]."""

    def __init__(self, in_features, units, rng, dtype=np.float32):
        self.in_features = int(in_features)
        self.units = int(units)
        self.weight = he_uniform(rng, (self.in_features, self.units), self.in_features, dtype)
        self.bias = np.zeros(self.units, dtype=dtype)
        self._cache = None
        self._grads: dict[str, np.ndarray] = {}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return self._grads

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"dense layer expects [N,{self.in_features}] input, got shape {x.shape}"
            )
        if train:
            self._cache = x
        return matmul(x, self.weight) + self.bias

    def backward(self, grad_out):
        x = self._take_cache()
        self._grads = {
            "weight": matmul(x.T, grad_out),
            "bias": grad_out.sum(axis=0, dtype=np.float64).astype(grad_out.dtype),
        }
        return matmul(grad_out, self.weight.T)

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_features:
            raise ShapeError(f"dense layer expects {self.in_features} features, got {in_shape}")
        return (self.units,)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for numerical stability."""
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"softmax expects [N,K] logits with K >= 2, got shape {logits.shape}")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


PROB_FLOOR = 1e-12  # applied before the log so a confidently wrong model yields a finite loss


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true class."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(
            f"cross_entropy expects probs [N,K] and labels [N], got {probs.shape} and {labels.shape}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError(f"label out of range [0,{probs.shape[1]}): {labels}")
    picked = probs[np.arange(labels.size), labels]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean(dtype=np.float64))


def softmax_cross_entropy_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of mean cross-entropy w.r.t. the logits: (probs - onehot) / N."""
    n = probs.shape[0]
    grad = probs.astype(probs.dtype, copy=True)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return grad
