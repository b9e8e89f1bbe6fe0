"""Dense-array numerical kernels: matmul, 2-D convolution, max-pooling.

Values live in plain numpy ndarrays, image-like data in N,C,H,W row-major
layout. Storage dtype is whatever the caller passes in (float32 for trained
models, float64 for gradient checking); dot-product accumulation always
happens in float64 before the result is cast back to the storage dtype.

The "convolution" computed here is cross-correlation: kernels slide over the
input without being flipped. For learned kernels the two conventions differ
only by kernel orientation, and cross-correlation is what mainstream CNN
stacks compute, so that is the contract of ``conv2d``.

Convolution is lowered to a single matrix multiply via im2col; the test
suite checks the lowered kernels elementwise against naive nested-loop
references.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


def conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    """floor((size + 2*padding - kernel) / stride) + 1, may be <= 0 for bad geometry."""
    return (size + 2 * padding - kernel) // stride + 1


def _as_pair(value) -> tuple[int, int]:
    if isinstance(value, (int, np.integer)):
        return int(value), int(value)
    pair = tuple(int(v) for v in value)
    if len(pair) != 2:
        raise ShapeError(f"expected an int or a pair of ints, got {value!r}")
    return pair


@dataclass(frozen=True)
class ConvGeometry:
    """Kernel/stride/padding extents for conv2d. All pairs are (height, width)."""

    kernel: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        object.__setattr__(self, "kernel", _as_pair(self.kernel))
        object.__setattr__(self, "stride", _as_pair(self.stride))
        object.__setattr__(self, "padding", _as_pair(self.padding))
        if min(self.kernel) < 1:
            raise ShapeError(f"kernel extents must be >= 1, got {self.kernel}")
        if min(self.stride) < 1:
            raise ShapeError(f"stride extents must be >= 1, got {self.stride}")
        if min(self.padding) < 0:
            raise ShapeError(f"padding must be >= 0, got {self.padding}")

    def out_extents(self, height: int, width: int) -> tuple[int, int]:
        """Output spatial extents for an input of the given extents.

        Raises ShapeError when either extent would be degenerate (< 1).
        """
        oh = conv_output_extent(height, self.kernel[0], self.stride[0], self.padding[0])
        ow = conv_output_extent(width, self.kernel[1], self.stride[1], self.padding[1])
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"degenerate output extent {oh}x{ow} for input {height}x{width} "
                f"with kernel {self.kernel}, stride {self.stride}, padding {self.padding}"
            )
        return oh, ow


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rank-2 matrix product c[i,j] = sum_p a[i,p] * b[p,j].

    Accumulates in float64 and casts back to the promoted input dtype.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents do not match: {a.shape} x {b.shape}")
    out = a.astype(np.float64, copy=False) @ b.astype(np.float64, copy=False)
    return out.astype(np.result_type(a.dtype, b.dtype), copy=False)


def _require_4d(name: str, t: np.ndarray) -> None:
    if t.ndim != 4:
        raise ShapeError(f"{name} must be rank-4 (N,C,H,W), got shape {t.shape}")


def _pad_spatial(x: np.ndarray, padding: tuple[int, int]) -> np.ndarray:
    ph, pw = padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _im2col(xp: np.ndarray, kernel: tuple[int, int], stride: tuple[int, int]) -> np.ndarray:
    """[N,C,Hp,Wp] -> float64 [N*oh*ow, C*kh*kw] patch matrix."""
    kh, kw = kernel
    sh, sw = stride
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    n, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).astype(np.float64)
    return cols.reshape(n * oh * ow, c * kh * kw)


def _check_conv_args(x, kernels, geom):
    _require_4d("input", x)
    _require_4d("kernels", kernels)
    n, c, h, w = x.shape
    f, ck, kh, kw = kernels.shape
    if (kh, kw) != geom.kernel:
        raise ShapeError(f"kernel tensor is {kh}x{kw} but geometry says {geom.kernel}")
    if ck != c:
        raise ShapeError(f"channel mismatch: input has {c} channels, kernels expect {ck}")
    return n, c, h, w, f


def conv2d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Cross-correlate a batch [N,C,H,W] with kernels [F,C,kh,kw] plus bias [F].

    Returns [N,F,oh,ow] where the output extents follow
    floor((in + 2*pad - k)/stride) + 1.
    """
    x = np.asarray(x)
    kernels = np.asarray(kernels)
    bias = np.asarray(bias)
    n, c, h, w, f = _check_conv_args(x, kernels, geom)
    if bias.shape != (f,):
        raise ShapeError(f"bias must have shape ({f},), got {bias.shape}")
    oh, ow = geom.out_extents(h, w)

    cols = _im2col(_pad_spatial(x, geom.padding), geom.kernel, geom.stride)
    w2 = kernels.reshape(f, -1).astype(np.float64, copy=False)
    out = cols @ w2.T + bias.astype(np.float64, copy=False)
    out = out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out, dtype=np.result_type(x.dtype, kernels.dtype))


def conv2d_backward(
    x: np.ndarray, kernels: np.ndarray, geom: ConvGeometry, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytical gradients of conv2d w.r.t. input, kernels and bias.

    ``grad_out`` must have the exact shape conv2d produced for these inputs.
    """
    x = np.asarray(x)
    kernels = np.asarray(kernels)
    grad_out = np.asarray(grad_out)
    n, c, h, w, f = _check_conv_args(x, kernels, geom)
    oh, ow = geom.out_extents(h, w)
    if grad_out.shape != (n, f, oh, ow):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match conv output ({n},{f},{oh},{ow})"
        )
    kh, kw = geom.kernel
    sh, sw = geom.stride
    ph, pw = geom.padding
    dtype = np.result_type(x.dtype, kernels.dtype)

    cols = _im2col(_pad_spatial(x, geom.padding), geom.kernel, geom.stride)
    g2 = grad_out.transpose(0, 2, 3, 1).astype(np.float64).reshape(n * oh * ow, f)

    grad_kernels = (g2.T @ cols).reshape(kernels.shape)
    grad_bias = g2.sum(axis=0)

    w2 = kernels.reshape(f, -1).astype(np.float64, copy=False)
    dcols = (g2 @ w2).reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    dxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + sh * (oh - 1) + 1 : sh, j : j + sw * (ow - 1) + 1 : sw] += dcols[
                :, :, :, :, i, j
            ]
    grad_input = dxp[:, :, ph : ph + h, pw : pw + w]

    return (
        np.ascontiguousarray(grad_input, dtype=dtype),
        grad_kernels.astype(dtype),
        grad_bias.astype(dtype),
    )


def maxpool2d(x: np.ndarray, window, stride) -> tuple[np.ndarray, np.ndarray]:
    """Max over sliding windows; no implicit padding.

    Returns (output, argmax) where argmax[n,c,i,j] is the flat row-major
    index into the H*W source plane of the chosen maximum. Ties resolve to
    the first occurrence in row-major window order.
    """
    x = np.asarray(x)
    _require_4d("input", x)
    wh, ww = _as_pair(window)
    sh, sw = _as_pair(stride)
    if min(wh, ww) < 1 or min(sh, sw) < 1:
        raise ShapeError(f"window {window} and stride {stride} must be >= 1")
    n, c, h, w = x.shape
    if wh > h or ww > w:
        raise ShapeError(f"pool window {wh}x{ww} larger than input {h}x{w}")
    oh = (h - wh) // sh + 1
    ow = (w - ww) // sw + 1

    win = sliding_window_view(x, (wh, ww), axis=(2, 3))[:, :, ::sh, ::sw]
    flat = win.reshape(n, c, oh, ow, wh * ww)
    k = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, k[..., None], axis=-1)[..., 0]

    src_rows = np.arange(oh).reshape(1, 1, oh, 1) * sh + k // ww
    src_cols = np.arange(ow).reshape(1, 1, 1, ow) * sw + k % ww
    argmax = (src_rows * w + src_cols).astype(np.int64)
    return np.ascontiguousarray(out), argmax


def maxpool2d_backward(argmax: np.ndarray, grad_out: np.ndarray, input_shape) -> np.ndarray:
    """Route grad_out values to the positions recorded in argmax, zero elsewhere."""
    argmax = np.asarray(argmax)
    grad_out = np.asarray(grad_out)
    if argmax.shape != grad_out.shape:
        raise ShapeError(f"argmax shape {argmax.shape} != grad_out shape {grad_out.shape}")
    n, c, h, w = (int(v) for v in input_shape)
    if argmax.ndim != 4 or argmax.shape[0] != n or argmax.shape[1] != c:
        raise ShapeError(
            f"argmax shape {argmax.shape} does not match input shape {tuple(input_shape)}"
        )
    if argmax.size and (argmax.min() < 0 or argmax.max() >= h * w):
        raise ShapeError("argmax indices out of range for the given input shape (stale cache?)")

    grad_input = np.zeros((n, c, h * w), dtype=grad_out.dtype)
    np.add.at(
        grad_input,
        (np.arange(n)[:, None, None, None], np.arange(c)[None, :, None, None], argmax),
        grad_out,
    )
    return grad_input.reshape(n, c, h, w)
