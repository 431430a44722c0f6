"""Numeric kernels on float64 numpy arrays.

Every tensor in the package is a C-contiguous ``np.ndarray`` of dtype float64.
Random draws go through ``np.random.Generator`` seeded with PCG64, whose bit
stream is fixed across platforms for a given seed.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, DomainError, PreconditionError

DTYPE = np.float64


def as_tensor(x):
    return np.ascontiguousarray(x, dtype=DTYPE)


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(int(seed)))


def matmul(a, b):
    """Matrix product of an (M, K) and a (K, N) array."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _im2col(x, k, stride, pad):
    # (N, C, H, W) -> (N, H', W', C, k, k) view over the padded input
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return win.transpose(0, 2, 3, 1, 4, 5)


def conv_output_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def conv2d(x, kernel, stride=1, pad=0, return_cols=False):
    """2-D cross-correlation with zero padding.

    ``x`` is (N, C, H, W) and ``kernel`` is (F, C, k, k). The output is
    (N, F, H', W') with ``H' = (H + 2*pad - k) // stride + 1``.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c or kh != kw:
        raise DimensionError(f"conv2d: kernel {kernel.shape} does not match input {x.shape}")
    if stride < 1:
        raise DimensionError(f"conv2d: stride must be >= 1, got {stride}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise DimensionError(f"conv2d: kernel {kernel.shape} larger than padded input {x.shape} (pad={pad})")
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)
    cols = np.ascontiguousarray(_im2col(x, kh, stride, pad)).reshape(n * ho * wo, c * kh * kw)
    out = (cols @ kernel.reshape(f, -1).T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    if return_cols:
        return out, cols
    return out


def conv2d_backward(dy, cols, x_shape, kernel, stride=1, pad=0):
    """Gradients of ``conv2d`` w.r.t. its input and kernel.

    ``cols`` is the im2col matrix returned by ``conv2d(..., return_cols=True)``.
    """
    n, c, h, w = x_shape
    f, _, k, _ = kernel.shape
    _, _, ho, wo = dy.shape
    dy2 = dy.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
    dkernel = (dy2.T @ cols).reshape(kernel.shape)
    dcols = (dy2 @ kernel.reshape(f, -1)).reshape(n, ho, wo, c, k, k)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dxp), dkernel


def relu(x):
    """Return ``(max(x, 0), mask)``; the mask is 0 where ``x <= 0``.

    NaN passes through unchanged so divergence stays visible downstream.
    """
    mask = x > 0
    return np.where(mask | np.isnan(x), x, 0.0), mask


def relu_backward(dy, mask):
    return np.where(mask, dy, 0.0)


def variance_sum(batch):
    """Sum over coordinates of the unbiased per-coordinate batch variance.

    ``batch`` has the example axis first; all remaining axes are coordinates.
    """
    batch = np.asarray(batch, dtype=DTYPE)
    if batch.shape[0] < 2:
        raise PreconditionError("variance_sum needs a batch of at least 2 examples")
    flat = batch.reshape(batch.shape[0], -1)
    return float(np.var(flat, axis=0, ddof=1).sum())


def orthogonal(shape, rng):
    if len(shape) != 2:
        raise DimensionError(
            f"orthogonal sampling needs a 2-D shape, got {tuple(shape)}; "
            "fold trailing axes into the second dimension first")
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(q, dtype=DTYPE)


def sample(dist, shape, rng, **params):
    """Draw a tensor from ``normal`` (mean, std), ``uniform`` (low, high) or ``orthogonal``."""
    shape = tuple(int(s) for s in shape)
    if dist == "normal":
        mean = params.get("mean", 0.0)
        std = params.get("std", 1.0)
        if std < 0:
            raise DomainError(f"normal std must be >= 0, got {std}")
        return mean + std * rng.standard_normal(shape)
    if dist == "uniform":
        low = params.get("low", 0.0)
        high = params.get("high", 1.0)
        if low > high:
            raise DomainError(f"uniform bounds out of order: {low} > {high}")
        return low + (high - low) * rng.random(shape)
    if dist == "orthogonal":
        return orthogonal(shape, rng)
    raise DomainError(f"unknown distribution {dist!r}")
