"""Layer descriptors with their float64 forward and backward passes.

Activations are NHWC for spatial layers and (N, features) after Flatten.
Each ``forward`` returns ``(out, cache)``; ``backward`` takes the cache and
the upstream gradient and returns ``(dx, param_grads)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def _same_pads(size: int, k: int, s: int) -> tuple[int, int]:
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return total // 2, total - total // 2


@dataclass(frozen=True)
class Conv2D:
    out_channels: int
    kernel: tuple = (3, 3)
    stride: int = 1
    padding: str = "same"
    in_channels: int | None = None

    kind = "conv2d"
    param_names = ("kernel", "bias")

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.padding not in ("same", "valid"):
            raise ShapeError(f"unknown padding {self.padding!r}")

    def _pads(self, h, w):
        kh, kw = self.kernel
        if self.padding == "valid":
            return (0, 0), (0, 0)
        return _same_pads(h, kh, self.stride), _same_pads(w, kw, self.stride)

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"Conv2D needs an HxWxC input, got {shape}")
        h, w, c = shape
        if self.in_channels is not None and self.in_channels != c:
            raise ShapeError(f"Conv2D declares {self.in_channels} input channels, got {c}")
        (pt, pb), (pl, pr) = self._pads(h, w)
        kh, kw = self.kernel
        ho = (h + pt + pb - kh) // self.stride + 1
        wo = (w + pl + pr - kw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"kernel {self.kernel} larger than input {shape}")
        return (ho, wo, self.out_channels)

    def param_shapes(self, shape):
        kh, kw = self.kernel
        return {"kernel": (kh, kw, shape[2], self.out_channels), "bias": (self.out_channels,)}

    def fan_in(self, shape):
        return self.kernel[0] * self.kernel[1] * shape[2]

    def forward(self, params, x):
        kernel, bias = params["kernel"], params["bias"]
        n, h, w, c = x.shape
        kh, kw = self.kernel
        s = self.stride
        (pt, pb), (pl, pr) = self._pads(h, w)
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt + pb + pl + pr else x
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::s, ::s]
        ho, wo = win.shape[1], win.shape[2]
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
        out = cols @ kernel.reshape(kh * kw * c, self.out_channels) + bias
        return out.reshape(n, ho, wo, self.out_channels), (cols, xp.shape, (pt, pl), x.shape)

    def backward(self, params, cache, dout):
        cols, xp_shape, (pt, pl), x_shape = cache
        kernel = params["kernel"]
        kh, kw, c, co = kernel.shape
        s = self.stride
        n, ho, wo, _ = dout.shape
        d2 = dout.reshape(-1, co)
        grads = {"kernel": (cols.T @ d2).reshape(kernel.shape), "bias": d2.sum(axis=0)}
        dcols = (d2 @ kernel.reshape(kh * kw * c, co).T).reshape(n, ho, wo, kh, kw, c)
        dxp = np.zeros(xp_shape)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += dcols[:, :, :, i, j, :]
        h, w = x_shape[1], x_shape[2]
        return dxp[:, pt:pt + h, pl:pl + w, :], grads


@dataclass(frozen=True)
class MaxPool:
    window: int = 2
    stride: int = 2

    kind = "maxpool"
    param_names = ()

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"MaxPool needs an HxWxC input, got {shape}")
        h, w, c = shape
        ho = (h - self.window) // self.stride + 1
        wo = (w - self.window) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"pool window {self.window} larger than input {shape}")
        return (ho, wo, c)

    def forward(self, params, x):
        k, s = self.window, self.stride
        win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
        n, ho, wo, c = win.shape[:4]
        flat = win.reshape(n, ho, wo, c, k * k)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return out, (arg, x.shape)

    def backward(self, params, cache, dout):
        arg, x_shape = cache
        k, s = self.window, self.stride
        n, ho, wo, c = dout.shape
        dx = np.zeros(x_shape)
        for a in range(k):
            for b in range(k):
                hit = np.where(arg == a * k + b, dout, 0.0)
                dx[:, a:a + s * (ho - 1) + 1:s, b:b + s * (wo - 1) + 1:s, :] += hit
        return dx, {}


@dataclass(frozen=True)
class ReLU:
    kind = "relu"
    param_names = ()

    def output_shape(self, shape):
        return tuple(shape)

    def forward(self, params, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, params, mask, dout):
        return np.where(mask, dout, 0.0), {}


@dataclass(frozen=True)
class Flatten:
    kind = "flatten"
    param_names = ()

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, shape, dout):
        return dout.reshape(shape), {}


@dataclass(frozen=True)
class Dense:
    out_features: int
    in_features: int | None = None

    kind = "dense"
    param_names = ("weight", "bias")

    def output_shape(self, shape):
        if len(shape) != 1:
            raise ShapeError(f"Dense needs a flat input, got {shape}; add Flatten")
        if self.in_features is not None and self.in_features != shape[0]:
            raise ShapeError(f"Dense expects {self.in_features} inputs, got {shape[0]}")
        return (self.out_features,)

    def param_shapes(self, shape):
        return {"weight": (shape[0], self.out_features), "bias": (self.out_features,)}

    def fan_in(self, shape):
        return shape[0]

    def forward(self, params, x):
        return x @ params["weight"] + params["bias"], x

    def backward(self, params, x, dout):
        grads = {"weight": x.T @ dout, "bias": dout.sum(axis=0)}
        return dout @ params["weight"].T, grads


@dataclass(frozen=True)
class SoftmaxCrossEntropyHead:
    num_classes: int

    kind = "head"
    param_names = ()

    def output_shape(self, shape):
        if tuple(shape) != (self.num_classes,):
            raise ShapeError(f"head expects {self.num_classes} logits, got {shape}")
        return tuple(shape)


LAYER_TYPES = {cls.kind: cls for cls in (Conv2D, MaxPool, ReLU, Flatten, Dense, SoftmaxCrossEntropyHead)}


def layer_to_dict(layer) -> dict:
    d = {"type": layer.kind}
    d.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(layer).items()})
    return d


def layer_from_dict(d: dict):
    d = dict(d)
    cls = LAYER_TYPES[d.pop("type")]
    return cls(**d)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return float(loss), dlogits / n
