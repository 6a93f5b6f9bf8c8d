"""Additive Gaussian obfuscation of dataset features and the averaging attack."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from ._exact import floor_mul
from .data import Dataset
from .errors import ShapeMismatch


@dataclass(frozen=True)
class ObfuscationSpec:
    sigma: float
    r: float = 1.0
    clip: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma={self.sigma} must be nonnegative")
        if not 0 <= self.r <= 1:
            raise ValueError(f"R={self.r} outside [0, 1]")


def obfuscated_rows(n: int, spec: ObfuscationSpec) -> np.ndarray:
    """Sorted indices of the floor(R*n) rows that receive noise."""
    k = floor_mul(n, spec.r)
    if k == n:
        return np.arange(n, dtype=np.int64)
    perm = rng.permutation(rng.derive_stream(spec.seed, "sample"), n)
    return np.sort(perm[:k])


def obfuscate(dataset: Dataset, spec: ObfuscationSpec) -> Dataset:
    """Add IID N(0, sigma^2) noise to every feature of a floor(R*n)-row subset.

    Labels and row order are untouched.  Noise for the selected rows is drawn
    in row-major order from the seed's "noise" stream, so for a fixed seed
    the output is ``x + sigma * g`` with the same standard normal ``g`` for
    every sigma.
    """
    rows = obfuscated_rows(len(dataset), spec)
    if spec.sigma == 0 or len(rows) == 0:
        return dataset.with_features(dataset.features.copy())
    noise = rng.gaussians(rng.derive_stream(spec.seed, "noise"), spec.sigma,
                          len(rows) * dataset.dim).reshape(len(rows), dataset.dim)
    feats = dataset.features.copy()
    feats[rows] += noise
    if spec.clip:
        np.clip(feats, 0.0, 1.0, out=feats)
    return dataset.with_features(feats)


def reconstruct_by_averaging(disclosures, reference: Dataset) -> tuple[Dataset, float]:
    """Element-wise mean of repeated obfuscated disclosures, and its MSE to ``reference``.

    ``disclosures`` may be any iterable; it is consumed once, so a generator
    keeps memory at one disclosure plus the running sum.
    """
    first = None
    count = 0
    for d in disclosures:
        if first is None:
            first = d
            if reference.features.shape != first.features.shape:
                raise ShapeMismatch(f"reference shape {reference.features.shape} vs "
                                    f"{first.features.shape}")
            total = np.zeros_like(first.features)
        elif d.features.shape != first.features.shape or not np.array_equal(d.labels, first.labels):
            raise ShapeMismatch("disclosures disagree on n, d or labels")
        total += d.features
        count += 1
    if first is None:
        raise ShapeMismatch("need at least one disclosure")
    estimate = first.with_features(total / count)
    mse = float(np.mean((estimate.features - reference.features) ** 2))
    return estimate, mse
