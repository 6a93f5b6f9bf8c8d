"""Architectures, weight sets, initialisation, loss/gradients and accuracy."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .. import rng
from ..errors import ArchMismatch, ShapeError
from .layers import (
    Conv2D,
    Dense,
    Flatten,
    MaxPool,
    ReLU,
    SoftmaxCrossEntropyHead,
    layer_from_dict,
    layer_to_dict,
    log_softmax,
    softmax_cross_entropy,
)


@dataclass(frozen=True)
class ModelArch:
    input_shape: tuple
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    @cached_property
    def shapes(self) -> list:
        """Input shape of every layer followed by the final output shape.

        Raises ShapeError when the chain breaks or the last layer is not the
        classification head.
        """
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer.output_shape(shapes[-1]))
        if not self.layers or not isinstance(self.layers[-1], SoftmaxCrossEntropyHead):
            raise ShapeError("the last layer must be SoftmaxCrossEntropyHead")
        return shapes

    @property
    def num_classes(self) -> int:
        return self.layers[-1].num_classes

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [layer_to_dict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelArch":
        return cls(tuple(d["input_shape"]), tuple(layer_from_dict(l) for l in d["layers"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @cached_property
    def fingerprint(self) -> bytes:
        return rng.digest(self.to_json().encode())

    def param_specs(self) -> list:
        """``(name, shape, fan_in)`` for every tensor, in canonical order."""
        shapes = self.shapes
        specs = []
        for i, layer in enumerate(self.layers):
            if not layer.param_names:
                continue
            pshapes = layer.param_shapes(shapes[i])
            for pname in layer.param_names:
                specs.append((f"layer{i}.{pname}", pshapes[pname], layer.fan_in(shapes[i])))
        return specs


class ModelWeights:
    """Ordered, named float64 tensors bound to an architecture.  Read-only."""

    def __init__(self, arch: ModelArch, tensors):
        self.arch = arch
        specs = arch.param_specs()
        tensors = dict(tensors)
        if [s[0] for s in specs] != list(tensors):
            raise ArchMismatch(f"tensor names {list(tensors)} do not match the architecture")
        frozen = {}
        for name, shape, _ in specs:
            a = np.array(tensors[name], dtype=np.float64)
            if a.shape != tuple(shape):
                raise ArchMismatch(f"{name}: shape {a.shape}, architecture wants {shape}")
            a.flags.writeable = False
            frozen[name] = a
        self.tensors = frozen

    @property
    def arch_fingerprint(self) -> bytes:
        return self.arch.fingerprint

    def names(self):
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def __getitem__(self, name):
        return self.tensors[name]

    def __len__(self):
        return len(self.tensors)

    def num_params(self) -> int:
        return sum(a.size for a in self.tensors.values())

    def mutable(self) -> dict:
        return {k: v.copy() for k, v in self.tensors.items()}

    def replace(self, **updates) -> "ModelWeights":
        t = dict(self.tensors)
        t.update(updates)
        return ModelWeights(self.arch, t)

    def map(self, fn) -> "ModelWeights":
        return ModelWeights(self.arch, {k: fn(v) for k, v in self.tensors.items()})

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.tensors.values())

    def __repr__(self):
        return f"ModelWeights({len(self)} tensors, {self.num_params()} params)"


def init_model(arch: ModelArch, stream: rng.RngStream) -> ModelWeights:
    """Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    tensors = {}
    for name, shape, fan_in in arch.param_specs():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
            continue
        bound = np.sqrt(6.0 / fan_in)
        u = stream.uniform(int(np.prod(shape)))
        tensors[name] = ((2.0 * u - 1.0) * bound).reshape(shape)
    return ModelWeights(arch, tensors)


def _layer_params(arch: ModelArch, params: dict, i: int) -> dict:
    return {p: params[f"layer{i}.{p}"] for p in arch.layers[i].param_names}


def _check_input(arch: ModelArch, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"expected a nonempty (n, d) batch, got {x.shape}")
    if x.shape[1] != int(np.prod(arch.input_shape)):
        raise ShapeError(f"batch has {x.shape[1]} features, architecture wants {arch.input_shape}")
    return x.reshape((x.shape[0],) + arch.input_shape)


def forward(weights: ModelWeights, features: np.ndarray, keep_cache: bool = False):
    arch = weights.arch
    x = _check_input(arch, features)
    params = weights.tensors
    caches = []
    for i, layer in enumerate(arch.layers[:-1]):
        x, cache = layer.forward(_layer_params(arch, params, i), x)
        if keep_cache:
            caches.append(cache)
    return (x, caches) if keep_cache else x


def loss_and_grads(weights: ModelWeights, features: np.ndarray, labels: np.ndarray,
                   params: dict | None = None) -> tuple[float, dict]:
    """Mean softmax cross-entropy over the batch and its exact gradients.

    ``params`` optionally overrides the tensors of ``weights`` (the training
    loop passes its working copy to avoid re-freezing every step).
    """
    arch = weights.arch
    params = weights.tensors if params is None else params
    x = _check_input(arch, features)
    labels = np.asarray(labels, dtype=np.int64)
    caches = []
    for i, layer in enumerate(arch.layers[:-1]):
        x, cache = layer.forward(_layer_params(arch, params, i), x)
        caches.append(cache)
    loss, d = softmax_cross_entropy(x, labels)
    grads = {}
    for i in range(len(arch.layers) - 2, -1, -1):
        layer = arch.layers[i]
        lp = _layer_params(arch, params, i)
        d, g = layer.backward(lp, caches[i], d)
        for pname, val in g.items():
            grads[f"layer{i}.{pname}"] = val
    return loss, {name: grads[name] for name in params}


def logits(weights: ModelWeights, features: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    out = [forward(weights, features[i:i + batch_size]) for i in range(0, len(features), batch_size)]
    return np.concatenate(out)


def predict_proba(weights: ModelWeights, features: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits(weights, features)))


def evaluate(weights: ModelWeights, test_set) -> float:
    """Fraction of rows whose argmax logit (lowest index on ties) equals the label."""
    if len(test_set) == 0:
        raise ShapeError("empty test set")
    pred = logits(weights, test_set.features).argmax(axis=1)
    return float(np.mean(pred == test_set.labels))


# ----------------------------------------------------------------- presets

def desk_mlp(input_shape, num_classes: int = 10) -> ModelArch:
    return ModelArch(input_shape, (Flatten(), Dense(128), ReLU(), Dense(64), ReLU(),
                                   Dense(num_classes), SoftmaxCrossEntropyHead(num_classes)))


def desk_cnn(input_shape, num_classes: int = 10) -> ModelArch:
    return ModelArch(input_shape, (Conv2D(16, (3, 3)), ReLU(), Conv2D(16, (3, 3)), ReLU(),
                                   MaxPool(2, 2), Flatten(), Dense(num_classes),
                                   SoftmaxCrossEntropyHead(num_classes)))


def paper_cnn(input_shape, num_classes: int = 10) -> ModelArch:
    """Six 3x3 same-padded convolutions (32-32-64-64-128-128), a max-pool after each pair."""
    layers = []
    for width in (32, 64, 128):
        layers += [Conv2D(width, (3, 3)), ReLU(), Conv2D(width, (3, 3)), ReLU(), MaxPool(2, 2)]
    layers += [Flatten(), Dense(num_classes), SoftmaxCrossEntropyHead(num_classes)]
    return ModelArch(input_shape, tuple(layers))


PRESETS = {"desk-mlp": desk_mlp, "desk-cnn": desk_cnn, "paper-cnn": paper_cnn}


def preset(name: str, input_shape, num_classes: int = 10) -> ModelArch:
    try:
        return PRESETS[name](input_shape, num_classes)
    except KeyError:
        raise ShapeError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}") from None
