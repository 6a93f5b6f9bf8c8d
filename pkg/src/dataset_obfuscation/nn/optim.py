from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Optimizer:
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.kind!r}")

    def init_state(self, params: dict) -> "OptState":
        if self.kind == "sgd":
            return OptState(0)
        return OptState(0, {k: np.zeros_like(v) for k, v in params.items()},
                        {k: np.zeros_like(v) for k, v in params.items()})

    def step(self, params: dict, grads: dict, state: "OptState", lr: float) -> None:
        """Apply one in-place update to ``params`` and advance ``state``."""
        state.step += 1
        if self.kind == "sgd":
            for k, p in params.items():
                p -= lr * grads[k]
            return
        t = state.step
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, p in params.items():
            g = grads[k]
            m, v = state.m[k], state.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class OptState:
    step: int
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self) -> "OptState":
        return OptState(self.step, {k: a.copy() for k, a in self.m.items()},
                        {k: a.copy() for k, a in self.v.items()})

    def to_tensors(self) -> dict:
        out = {"step": np.array(float(self.step))}
        out.update({f"m/{k}": a for k, a in self.m.items()})
        out.update({f"v/{k}": a for k, a in self.v.items()})
        return out

    @classmethod
    def from_tensors(cls, tensors: dict) -> "OptState":
        m = {k[2:]: np.array(a) for k, a in tensors.items() if k.startswith("m/")}
        v = {k[2:]: np.array(a) for k, a in tensors.items() if k.startswith("v/")}
        return cls(int(tensors["step"]), m, v)
