"""Tour of the raw numerical kernels: convolution, pooling, and their gradients.

Run:  python3 demos/01_kernels.py
"""

import numpy as np

from pvfault import ConvGeometry, conv2d, conv2d_backward, maxpool2d, maxpool2d_backward

rng = np.random.default_rng(0)

# --- convolution on a worked example -----------------------------------------
x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
kernel = np.ones((1, 1, 2, 2))
out = conv2d(x, kernel, np.zeros(1), ConvGeometry(kernel=(2, 2)))
print("3x3 ramp cross-correlated with an all-ones 2x2 kernel:")
print(out[0, 0])  # [[12 16] [24 28]]

# --- the output-extent law ----------------------------------------------------
geom = ConvGeometry(kernel=(3, 3), stride=(2, 2), padding=(1, 1))
image = rng.standard_normal((1, 3, 11, 17))
kernels = rng.standard_normal((4, 3, 3, 3))
result = conv2d(image, kernels, np.zeros(4), geom)
print(f"\ninput 11x17, kernel 3x3, stride 2, pad 1 -> output {result.shape[2]}x{result.shape[3]}")
print("matches floor((in + 2*pad - k)/stride) + 1 =",
      (11 + 2 - 3) // 2 + 1, "x", (17 + 2 - 3) // 2 + 1)

# --- convolution is linear in its input (zero bias) ---------------------------
a, b = 0.3, -1.7
x1 = rng.standard_normal(image.shape)
x2 = rng.standard_normal(image.shape)
lhs = conv2d(a * x1 + b * x2, kernels, np.zeros(4), geom)
rhs = a * conv2d(x1, kernels, np.zeros(4), geom) + b * conv2d(x2, kernels, np.zeros(4), geom)
print(f"\nlinearity residual: {np.abs(lhs - rhs).max():.2e}")

# --- max pooling records where each maximum came from -------------------------
plane = np.arange(16.0).reshape(1, 1, 4, 4)
pooled, argmax = maxpool2d(plane, (2, 2), (2, 2))
print("\n4x4 ramp pooled 2x2/stride 2:")
print(pooled[0, 0])
print("flat source indices of each maximum:")
print(argmax[0, 0])

# --- gradients route back exactly ----------------------------------------------
grad = np.ones_like(pooled)
routed = maxpool2d_backward(argmax, grad, plane.shape)
print("\npool gradient routed to argmax positions only:")
print(routed[0, 0])

# --- conv backward against a finite-difference probe --------------------------
geom = ConvGeometry(kernel=(3, 3), padding=(1, 1))
x = rng.standard_normal((1, 2, 5, 5))
k = rng.standard_normal((2, 2, 3, 3))
bias = rng.standard_normal(2)
proj = rng.standard_normal(conv2d(x, k, bias, geom).shape)
dx, dk, db = conv2d_backward(x, k, geom, proj)

eps = 1e-5
i = (0, 1, 2, 3)  # an arbitrary input coordinate
xp = x.copy()
xp[i] += eps
xm = x.copy()
xm[i] -= eps
numeric = ((conv2d(xp, k, bias, geom) * proj).sum() - (conv2d(xm, k, bias, geom) * proj).sum()) / (
    2 * eps
)
print(f"\nanalytic dL/dx at {i}: {dx[i]:+.8f}")
print(f"finite difference:       {numeric:+.8f}")
