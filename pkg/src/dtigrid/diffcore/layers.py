"""Fixed-architecture differentiable layers with hand-written backward passes.

Every layer follows the same pattern: forward(x) returns (y, cache) so one
layer instance can serve several passes per step (the contrastive variant
encodes three views), and backward(cache, gy) accumulates parameter
gradients in place and returns the input gradient.
"""

import numpy as np

from ..errors import NumericError, ShapeError
from . import convops


def he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Dense:
    def __init__(self, in_dim, out_dim, rng, name, init="he"):
        self.name = name
        if init == "he":
            self.w = he_uniform(rng, (out_dim, in_dim), in_dim)
        elif init == "glorot":
            self.w = glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim)
        elif init == "zero":
            self.w = np.zeros((out_dim, in_dim))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.b = np.zeros(out_dim)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.w.shape[1]:
            raise ShapeError(
                f"{self.name}: input {x.shape} incompatible with weight "
                f"{self.w.shape}"
            )
        return x @ self.w.T + self.b, x

    def backward(self, cache, gy):
        x = cache
        self.gw += gy.T @ x
        self.gb += gy.sum(axis=0)
        return gy @ self.w

    def param_items(self):
        return [
            (f"{self.name}.w", self.w, self.gw),
            (f"{self.name}.b", self.b, self.gb),
        ]


class Conv2d:
    """Stride-1 same-padding convolution (cross-correlation), odd kernel."""

    def __init__(self, in_ch, out_ch, k, rng, name, init="he"):
        shape = (out_ch, in_ch, k, k)
        fan_in = in_ch * k * k
        fan_out = out_ch * k * k
        if init == "he":
            self.w = he_uniform(rng, shape, fan_in)
        elif init == "glorot":
            self.w = glorot_uniform(rng, shape, fan_in, fan_out)
        elif init == "zero":
            self.w = np.zeros(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.b = np.zeros(out_ch)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self.name = name

    def forward(self, x):
        return convops.conv2d_forward(x, self.w, self.b)

    def backward(self, cache, gy):
        gx, gw, gb = convops.conv2d_backward(cache, self.w, gy)
        self.gw += gw
        self.gb += gb
        return gx

    def param_items(self):
        return [
            (f"{self.name}.w", self.w, self.gw),
            (f"{self.name}.b", self.b, self.gb),
        ]


class Relu:
    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, cache, gy):
        return gy * cache

    def param_items(self):
        return []


def sigmoid(x):
    """Numerically stable elementwise logistic."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Sigmoid:
    def forward(self, x):
        y = sigmoid(x)
        return y, y

    def backward(self, cache, gy):
        y = cache
        return gy * y * (1.0 - y)

    def param_items(self):
        return []


def check_finite(x, where):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {where}")
    return x
