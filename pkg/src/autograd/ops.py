"""
ops.py

Differentiable network operations: convolution, activations, channel
softmax, bilinear upsampling and channel concatenation.

Convolution uses the im2col layout (patches gathered with stride tricks,
one batched matmul) and scatters gradients back with col2im.
"""

import functools
from typing import Optional, Sequence, Tuple

import numpy as np

from autograd.tensor import ShapeError, Tensor, as_tensor, make_result


# ============================================================================
# Convolution
# ============================================================================

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(padded: np.ndarray, kh: int, kw: int, stride: int,
            h_out: int, w_out: int) -> np.ndarray:
    n, c = padded.shape[:2]
    s_n, s_c, s_h, s_w = padded.strides
    patches = np.lib.stride_tricks.as_strided(
        padded,
        shape=(n, c, kh, kw, h_out, w_out),
        strides=(s_n, s_c, s_h, s_w, stride * s_h, stride * s_w),
        writeable=False,
    )
    return patches.reshape(n, c * kh * kw, h_out * w_out)


def _col2im(cols: np.ndarray, padded_shape: Tuple[int, ...], kh: int, kw: int,
            stride: int, h_out: int, w_out: int) -> np.ndarray:
    n, c = padded_shape[:2]
    out = np.zeros(padded_shape)
    cols = cols.reshape(n, c, kh, kw, h_out, w_out)
    for i in range(kh):
        i_end = i + stride * h_out
        for j in range(kw):
            j_end = j + stride * w_out
            out[:, :, i:i_end:stride, j:j_end:stride] += cols[:, :, i, j]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D cross-correlation with zero padding.

    Args:
        x: N x Cin x H x W input
        weight: Cout x Cin x Kh x Kw kernel
        bias: Cout vector, optional
        stride: positive step between windows
        padding: zeros added on each side

    Returns:
        N x Cout x H' x W' with H' = floor((H + 2p - Kh) / stride) + 1
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c_in, h, w = x.shape
    c_out, w_c_in, kh, kw = weight.shape
    if c_in != w_c_in:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} has {c_in} channels, "
            f"weight {weight.shape} expects {w_c_in}"
        )
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d bias shape {bias.shape} does not match {c_out} output channels")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")

    h_out = conv_output_size(h, kh, stride, padding)
    w_out = conv_output_size(w, kw, stride, padding)
    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    padded = np.pad(x.data, pad) if padding else x.data
    cols = _im2col(padded, kh, kw, stride, h_out, w_out)
    w_mat = weight.data.reshape(c_out, -1)

    out = np.matmul(w_mat, cols).reshape(n, c_out, h_out, w_out)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def _backward(g):
        g_mat = g.reshape(n, c_out, h_out * w_out)
        grad_x = grad_w = grad_b = None
        if weight.requires_grad:
            grad_w = np.matmul(g_mat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if x.requires_grad:
            d_cols = np.matmul(w_mat.T, g_mat)
            grad_padded = _col2im(d_cols, padded.shape, kh, kw, stride, h_out, w_out)
            grad_x = grad_padded[:, :, padding:padding + h, padding:padding + w]
        if bias is not None and bias.requires_grad:
            grad_b = g.sum(axis=(0, 2, 3))
        grads = (grad_x, grad_w)
        return grads + (grad_b,) if bias is not None else grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result("conv2d", out, inputs, _backward)


# ============================================================================
# Activations
# ============================================================================

def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = as_tensor(x)
    positive = x.data > 0
    out = np.where(positive, x.data, slope * x.data)

    def _backward(g):
        return (np.where(positive, g, slope * g),)

    return make_result("leaky_relu", out, (x,), _backward)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # tanh form is exact at 0 (0.5) and never overflows
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def _backward(g):
        return (g * out * (1.0 - out),)

    return make_result("sigmoid", out, (x,), _backward)


def softmax_channel(x: Tensor) -> Tensor:
    """Softmax over axis 1 of an N x C x H x W tensor."""
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] < 2:
        raise ShapeError(f"softmax_channel expects N x C x H x W with C >= 2, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=1, keepdims=True)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return make_result("softmax_channel", out, (x,), _backward)


# ============================================================================
# Resampling and layout
# ============================================================================

@functools.lru_cache(maxsize=64)
def interpolation_matrix(in_size: int, out_size: int) -> np.ndarray:
    """
    Row-stochastic out_size x in_size linear interpolation weights.

    Half-pixel centers: source = (i + 0.5) * in/out - 0.5, clamped to the
    valid range.
    """
    matrix = np.zeros((out_size, in_size))
    scale = in_size / out_size
    for i in range(out_size):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), in_size - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, in_size - 1)
        frac = src - lo
        matrix[i, lo] += 1.0 - frac
        matrix[i, hi] += frac
    matrix.setflags(write=False)
    return matrix


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"bilinear_upsample expects N x C x h x w, got {x.shape}")
    h, w = x.shape[2:]
    if out_h < h or out_w < w:
        raise ValueError(f"bilinear_upsample cannot shrink {h}x{w} to {out_h}x{out_w}")
    rows = interpolation_matrix(h, out_h)
    cols = interpolation_matrix(w, out_w)
    out = np.matmul(np.matmul(rows, x.data), cols.T)

    def _backward(g):
        return (np.matmul(np.matmul(rows.T, g), cols),)

    return make_result("bilinear_upsample", out, (x,), _backward)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != 4 or t.shape[0] != base[0] or t.shape[2:] != base[2:]:
            raise ShapeError(f"concat_channels shape mismatch: {base} vs {t.shape}")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=1)

    def _backward(g):
        return tuple(np.split(g, splits, axis=1))

    return make_result("concat_channels", out, tensors, _backward)
