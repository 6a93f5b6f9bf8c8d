"""Model-difference measurements and the privacy/utility/distinguishability record."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArchMismatch, LengthMismatch, RangeError
from .nn.model import ModelWeights


def _check_same_arch(a: ModelWeights, b: ModelWeights) -> None:
    if a.arch_fingerprint != b.arch_fingerprint or a.names() != b.names():
        raise ArchMismatch("weight sets come from different architectures")
    for name in a.names():
        if a[name].shape != b[name].shape:
            raise ArchMismatch(f"{name}: {a[name].shape} vs {b[name].shape}")


def fnorm(a: ModelWeights, b: ModelWeights) -> float:
    """Frobenius norm of the difference over every entry of every tensor, biases included."""
    _check_same_arch(a, b)
    total = 0.0
    for name in a.names():
        d = a[name] - b[name]
        total += float(np.sum(d * d))
    return math.sqrt(total)


def distinguishability(w_ref: ModelWeights, w_obf_same: ModelWeights,
                       w_obf_other: ModelWeights) -> float:
    """|D(ref, same) - D(ref, other)|: how far apart a genuine and an impostor dataset land."""
    _check_same_arch(w_ref, w_obf_same)
    _check_same_arch(w_ref, w_obf_other)
    return abs(fnorm(w_ref, w_obf_same) - fnorm(w_ref, w_obf_other))


def trace_compare(ckpts_a, ckpts_b) -> list[float]:
    """Per-epoch F-norm between two checkpoint sequences of equal length."""
    ckpts_a, ckpts_b = list(ckpts_a), list(ckpts_b)
    if len(ckpts_a) != len(ckpts_b):
        raise LengthMismatch(f"{len(ckpts_a)} vs {len(ckpts_b)} checkpoints")
    return [fnorm(a, b) for a, b in zip(ckpts_a, ckpts_b)]


@dataclass(frozen=True)
class PUDReport:
    sigma: float
    recon_mse: float
    utility: float
    delta: float
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"sigma": self.sigma, "recon_mse": self.recon_mse, "utility": self.utility,
                "delta": self.delta, "metadata": dict(self.metadata)}


def pud_report(sigma: float, recon_mse: float, utility: float, delta: float,
               metadata=None) -> PUDReport:
    checks = [
        (sigma >= 0, f"sigma={sigma} must be >= 0"),
        (recon_mse >= 0, f"recon_mse={recon_mse} must be >= 0"),
        (0 <= utility <= 1, f"utility={utility} outside [0, 1]"),
        (delta >= 0, f"delta={delta} must be >= 0"),
    ]
    for ok, msg in checks:
        if not ok:
            raise RangeError(msg)
    return PUDReport(float(sigma), float(recon_mse), float(utility), float(delta), dict(metadata or {}))
