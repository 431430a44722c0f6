"""Layers with explicit forward/backward passes.

Each layer caches what it needs during ``forward`` and consumes the cache in
``backward``. Gradients are accumulated into ``Param.grad``.
"""

from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..errors import PreconditionError

WEIGHT = "weight"
SCALAR_BIAS = "scalar_bias"
MULTIPLIER = "multiplier"
BN_GAMMA = "bn_gamma"
BN_BETA = "bn_beta"

SCALAR_KINDS = (SCALAR_BIAS, MULTIPLIER)


@dataclass(eq=False)
class Param:
    name: str
    value: np.ndarray
    kind: str
    in_branch: bool = False
    branch_index: int = None
    layer_index: int = None
    is_last_in_branch: bool = False
    is_classifier: bool = False
    is_projection: bool = False
    relu_input: bool = False   # input passed through a ReLU (sets the He gain)
    fan_in: int = None
    fan_out: int = None
    grad: np.ndarray = field(default=None, repr=False)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


class Layer:
    params = ()

    def forward(self, x, train=True, update_stats=True):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Linear(Layer):
    """``y = x W^T`` with ``W`` of shape (out, in); no bias."""

    def __init__(self, weight):
        self.weight = weight
        self.params = (weight,)

    def forward(self, x, train=True, update_stats=True):
        self._x = x
        return T.matmul(x, self.weight.value.T)

    def backward(self, dy):
        self.weight.grad += dy.T @ self._x
        return dy @ self.weight.value


class Conv2d(Layer):
    def __init__(self, weight, stride=1, pad=0):
        self.weight = weight
        self.stride = stride
        self.pad = pad
        self.params = (weight,)

    def forward(self, x, train=True, update_stats=True):
        out, self._cols = T.conv2d(x, self.weight.value, self.stride, self.pad, return_cols=True)
        self._xshape = x.shape
        return out

    def backward(self, dy):
        dx, dk = T.conv2d_backward(dy, self._cols, self._xshape, self.weight.value,
                                   self.stride, self.pad)
        self.weight.grad += dk
        return dx


class ScalarBias(Layer):
    def __init__(self, bias):
        self.bias = bias
        self.params = (bias,)

    def forward(self, x, train=True, update_stats=True):
        return x + self.bias.value

    def backward(self, dy):
        self.bias.grad += dy.sum()
        return dy


class Multiplier(Layer):
    def __init__(self, scale):
        self.scale = scale
        self.params = (scale,)

    def forward(self, x, train=True, update_stats=True):
        self._x = x
        return self.scale.value * x

    def backward(self, dy):
        self.scale.grad += (dy * self._x).sum()
        return self.scale.value * dy


class ReLU(Layer):
    def forward(self, x, train=True, update_stats=True):
        out, self._mask = T.relu(x)
        return out

    def backward(self, dy):
        return T.relu_backward(dy, self._mask)


class Flatten(Layer):
    def forward(self, x, train=True, update_stats=True):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class GlobalAvgPool(Layer):
    def forward(self, x, train=True, update_stats=True):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        n, c, h, w = self._shape
        return np.broadcast_to(dy[:, :, None, None] / (h * w), self._shape).copy()


def batchnorm_forward(x, gamma, beta, eps=1e-5):
    """Normalize ``x`` with its own batch statistics.

    Features are axis 1; for 4-D input the statistics pool over N, H and W.
    Returns ``(out, cache)`` where cache feeds ``batchnorm_backward``.
    """
    if x.shape[0] < 2:
        raise PreconditionError("batchnorm in train mode needs a batch of at least 2")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.reshape(bshape) * xhat + beta.reshape(bshape)
    return out, (xhat, inv_std, gamma, axes, bshape, mean, var)


def batchnorm_backward(dy, cache):
    """Return ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, gamma, axes, bshape, _, _ = cache
    count = dy.size // dy.shape[1]
    dbeta = dy.sum(axis=axes)
    dgamma = (dy * xhat).sum(axis=axes)
    dxhat = dy * gamma.reshape(bshape)
    dx = (inv_std.reshape(bshape) / count) * (
        count * dxhat
        - dxhat.sum(axis=axes).reshape(bshape)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape))
    return dx, dgamma, dbeta


class BatchNorm(Layer):
    """Batch normalization over axis 1.

    Running statistics follow ``r <- momentum * r + (1 - momentum) * batch``;
    the running variance uses the unbiased batch estimate.
    """

    def __init__(self, gamma, beta, eps=1e-5, momentum=0.9):
        self.gamma = gamma
        self.beta = beta
        self.eps = eps
        self.momentum = momentum
        self.params = (gamma, beta)
        n = gamma.value.shape[0]
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)

    def forward(self, x, train=True, update_stats=True):
        if train:
            out, self._cache = batchnorm_forward(x, self.gamma.value, self.beta.value, self.eps)
            if update_stats:
                mean, var = self._cache[5], self._cache[6]
                count = x.size // x.shape[1]
                unbiased = var * count / max(count - 1, 1)
                self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
                self.running_var = self.momentum * self.running_var + (1 - self.momentum) * unbiased
            self._train = True
            return out
        bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
        inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
        self._eval_scale = (self.gamma.value * inv_std).reshape(bshape)
        self._xhat = (x - self.running_mean.reshape(bshape)) * inv_std.reshape(bshape)
        self._axes = (0,) if x.ndim == 2 else (0, 2, 3)
        self._train = False
        return self._eval_scale * x + (self.beta.value - self.gamma.value * self.running_mean * inv_std).reshape(bshape)

    def backward(self, dy):
        if self._train:
            dx, dgamma, dbeta = batchnorm_backward(dy, self._cache)
        else:
            dx = self._eval_scale * dy
            dgamma = (dy * self._xhat).sum(axis=self._axes)
            dbeta = dy.sum(axis=self._axes)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)
        self.params = tuple(p for layer in self.layers for p in layer.params)

    def forward(self, x, train=True, update_stats=True):
        for layer in self.layers:
            x = layer.forward(x, train, update_stats)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class ResidualBlock(Layer):
    """``out = post(scale * (shortcut(x) + branch(x)))``.

    ``shortcut`` of None is the identity; ``residual=False`` drops the
    shortcut path entirely (plain stack). ``post_relu`` applies a ReLU after
    the addition, as in the convolutional basic block.
    """

    def __init__(self, branch, shortcut=None, out_scale=1.0, post_relu=False, residual=True):
        self.branch = branch
        self.shortcut = shortcut
        self.out_scale = out_scale
        self.post_relu = post_relu
        self.residual = residual
        self.params = tuple(branch.params) + (tuple(shortcut.params) if shortcut is not None else ())

    def forward(self, x, train=True, update_stats=True):
        out = self.branch.forward(x, train, update_stats)
        if self.residual:
            s = x if self.shortcut is None else self.shortcut.forward(x, train, update_stats)
            out = s + out
        if self.out_scale != 1.0:
            out = self.out_scale * out
        if self.post_relu:
            out, self._mask = T.relu(out)
        return out

    def backward(self, dy):
        if self.post_relu:
            dy = T.relu_backward(dy, self._mask)
        if self.out_scale != 1.0:
            dy = self.out_scale * dy
        dx = self.branch.backward(dy)
        if self.residual:
            dx = dx + (dy if self.shortcut is None else self.shortcut.backward(dy))
        return dx
