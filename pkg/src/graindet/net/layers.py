"""Differentiable layers over numpy arrays.

All layers take batched input: convolutional layers operate on
``(N, H, W, C)`` arrays, dense layers on ``(N, D)``. ``forward`` caches what
``backward`` needs; ``backward`` accumulates parameter gradients and returns
the input gradient. Parameters are created in a configurable dtype —
float32 for training, float64 for finite-difference verification.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Parameter:
    """A learnable array with a matching gradient buffer."""

    def __init__(self, data: np.ndarray, name: str = ""):
        self.data = np.asarray(data)
        self.grad = np.zeros_like(self.data)
        self.name = name

    @property
    def shape(self):
        return self.data.shape


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[Parameter]:
        return []


class Conv2d(Layer):
    """2-D convolution (cross-correlation), NHWC layout, HWIO kernel."""

    def __init__(self, in_ch, out_ch, ksize=3, stride=1, padding=0,
                 rng=None, dtype=np.float32, name="conv"):
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = ksize * ksize * in_ch
        self.weight = Parameter(
            he_uniform(rng, (ksize, ksize, in_ch, out_ch), fan_in, dtype),
            name=f"{name}.weight",
        )
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype), name=f"{name}.bias")
        self.stride = stride
        self.padding = padding
        self._cache = None

    def forward(self, x, train=False):
        kh, kw, cin, _ = self.weight.shape
        if x.ndim != 4 or x.shape[3] != cin:
            raise ValueError(
                f"conv input shape {x.shape} incompatible with kernel "
                f"{self.weight.shape} (expect NHWC with C={cin})"
            )
        p, s = self.padding, self.stride
        if p:
            x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        windows = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::s, ::s]
        out = np.tensordot(windows, self.weight.data, axes=([3, 4, 5], [2, 0, 1]))
        out += self.bias.data
        self._cache = (x, windows)
        return out

    def backward(self, grad):
        x_pad, windows = self._cache
        kh, kw, cin, _ = self.weight.shape
        s, p = self.stride, self.padding
        n, hp, wp, _ = x_pad.shape
        ho, wo = grad.shape[1], grad.shape[2]

        self.bias.grad += grad.sum(axis=(0, 1, 2))
        dw = np.tensordot(windows, grad, axes=([0, 1, 2], [0, 1, 2]))
        self.weight.grad += dw.transpose(1, 2, 0, 3)

        dx_pad = np.zeros_like(x_pad)
        for k in range(kh):
            for l in range(kw):
                patch = np.tensordot(grad, self.weight.data[k, l], axes=([3], [1]))
                dx_pad[:, k:k + s * ho:s, l:l + s * wo:s, :] += patch
        if p:
            return dx_pad[:, p:hp - p, p:wp - p, :]
        return dx_pad

    def params(self):
        return [self.weight, self.bias]


class MaxPool2d(Layer):
    """Max pooling over NHWC input; trailing rows/cols that do not fill a
    window are dropped."""

    def __init__(self, window=2, stride=2):
        self.window = window
        self.stride = stride
        self._cache = None

    def forward(self, x, train=False):
        w, s = self.window, self.stride
        if x.ndim != 4:
            raise ValueError(f"pool input must be NHWC, got shape {x.shape}")
        windows = sliding_window_view(x, (w, w), axis=(1, 2))[:, ::s, ::s]
        n, ho, wo, c, _, _ = windows.shape
        flat = windows.reshape(n, ho, wo, c, w * w)
        arg = flat.argmax(axis=4)
        out = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]
        self._cache = (x.shape, arg)
        return out

    def backward(self, grad):
        x_shape, arg = self._cache
        n, h, wdt, c = x_shape
        w, s = self.window, self.stride
        ho, wo = grad.shape[1], grad.shape[2]
        ni, hi, wi, ci = np.indices((n, ho, wo, c), sparse=False)
        rows = hi * s + arg // w
        cols = wi * s + arg % w
        flat_idx = ((ni * h + rows) * wdt + cols) * c + ci
        dx = np.zeros(n * h * wdt * c, dtype=grad.dtype)
        np.add.at(dx, flat_idx.ravel(), grad.ravel())
        return dx.reshape(x_shape)


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask


class Dense(Layer):
    def __init__(self, in_dim, out_dim, rng=None, dtype=np.float32, name="dense"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(
            he_uniform(rng, (in_dim, out_dim), in_dim, dtype), name=f"{name}.weight"
        )
        self.bias = Parameter(np.zeros(out_dim, dtype=dtype), name=f"{name}.bias")
        self._cache = None

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.weight.shape[0]:
            raise ValueError(
                f"dense input shape {x.shape} incompatible with weight "
                f"{self.weight.shape}"
            )
        self._cache = x
        return x @ self.weight.data + self.bias.data

    def backward(self, grad):
        x = self._cache
        self.weight.grad += x.T @ grad
        self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.data.T

    def params(self):
        return [self.weight, self.bias]


class Dropout(Layer):
    """Inverted dropout: kept activations scale by 1/(1-p) at train time,
    identity at eval time."""

    def __init__(self, p: float, seed: int = 0):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        self.p = p
        self.rng = np.random.default_rng(seed)
        self._mask = None

    def reseed(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def forward(self, x, train=False):
        if not train or self.p == 0.0:
            self._mask = None
            return x
        keep = self.rng.random(x.shape) >= self.p
        self._mask = keep.astype(x.dtype) / (1.0 - self.p)
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask


class Flatten(Layer):
    """Collapse all but the leading batch axis."""

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out
