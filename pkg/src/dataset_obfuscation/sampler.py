"""S-X-Y-Z sampling of training sets from a global pool.

X is the label degree (fraction of the C labels a set covers), Y the label
overlap with a counterpart set, Z the per-label sampling ratio.  All counts
use floor semantics: a set covers floor(C*X) labels, shares floor(C*X*Y) of
them with its counterpart, and takes floor(Z*n_l) rows of each covered
label l.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import rng
from ._exact import floor_mul
from .data import Dataset
from .errors import DegenerateSpec, EmptyResult, InfeasibleOverlap

_SPEC_RE = re.compile(r"^S-([0-9.eE+-]+?)-([0-9.eE+-]+?)-([0-9.eE+-]+)$")


def _fmt(v: float) -> str:
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


@dataclass(frozen=True)
class SamplingSpec:
    x: float
    y: float
    z: float
    seed: int = 0
    anchor_labels: tuple | None = None

    def __post_init__(self):
        if not 0 < self.x <= 1:
            raise ValueError(f"label degree X={self.x} outside (0, 1]")
        if not 0 <= self.y <= 1:
            raise ValueError(f"overlap ratio Y={self.y} outside [0, 1]")
        if not 0 < self.z <= 1:
            raise ValueError(f"sampling ratio Z={self.z} outside (0, 1]")
        if self.anchor_labels is not None:
            object.__setattr__(self, "anchor_labels", tuple(sorted(int(l) for l in self.anchor_labels)))

    @classmethod
    def parse(cls, text: str, seed: int = 0, anchor_labels=None) -> "SamplingSpec":
        m = _SPEC_RE.match(text.strip())
        if not m:
            raise ValueError(f"not an S-X-Y-Z string: {text!r}")
        x, y, z = (float(g) for g in m.groups())
        return cls(x, y, z, seed, anchor_labels)

    def __str__(self):
        return f"S-{_fmt(self.x)}-{_fmt(self.y)}-{_fmt(self.z)}"

    def num_labels(self, num_classes: int) -> int:
        return floor_mul(num_classes, self.x)

    def num_shared(self, num_classes: int) -> int:
        return floor_mul(num_classes, self.x, self.y)

    def check_anchor(self, num_classes: int) -> None:
        if self.anchor_labels is None:
            return
        k = self.num_labels(num_classes)
        if len(set(self.anchor_labels)) != k:
            raise DegenerateSpec(f"{self}: anchor list has {len(self.anchor_labels)} labels, "
                                 f"expected floor(C*X) = {k}")
        if min(self.anchor_labels) < 0 or max(self.anchor_labels) >= num_classes:
            raise DegenerateSpec(f"{self}: anchor labels outside [0, {num_classes})")


def label_set(num_classes: int, x: float, stream: rng.RngStream) -> tuple:
    """Uniform choice of floor(C*X) labels, returned sorted."""
    if not 0 < x <= 1:
        raise ValueError(f"label degree X={x} outside (0, 1]")
    k = floor_mul(num_classes, x)
    if k == 0:
        raise DegenerateSpec(f"floor({num_classes} * {x}) = 0 labels")
    return tuple(sorted(rng.choose(stream, range(num_classes), k)))


def counterpart_labels(anchor, num_classes: int, x: float, y: float,
                       stream: rng.RngStream) -> tuple:
    """Label set of the same size as ``anchor`` sharing exactly floor(C*X*Y) labels with it."""
    anchor = sorted(set(int(l) for l in anchor))
    k = floor_mul(num_classes, x)
    shared = floor_mul(num_classes, x, y)
    if len(anchor) != k:
        raise DegenerateSpec(f"anchor has {len(anchor)} labels, floor(C*X) = {k}")
    complement = [l for l in range(num_classes) if l not in set(anchor)]
    if k - shared > len(complement):
        raise InfeasibleOverlap(f"need {k - shared} labels outside the anchor, "
                                f"only {len(complement)} exist")
    keep = rng.choose(stream, anchor, shared)
    extra = rng.choose(stream, complement, k - shared)
    return tuple(sorted(keep + extra))


def sample_indices(pool: Dataset, labels, z: float, stream: rng.RngStream) -> np.ndarray:
    """Pool row indices of a per-label draw without replacement, in pool order."""
    if not 0 < z <= 1:
        raise ValueError(f"sampling ratio Z={z} outside (0, 1]")
    labels = sorted(set(int(l) for l in labels))
    if not labels:
        raise DegenerateSpec("empty label set")
    if labels[0] < 0 or labels[-1] >= pool.num_classes:
        raise DegenerateSpec(f"labels {labels} outside [0, {pool.num_classes})")
    chosen = []
    for label in labels:
        rows = np.flatnonzero(pool.labels == label)
        take = floor_mul(len(rows), z)
        chosen.extend(rng.choose(stream, rows.tolist(), take))
    if not chosen:
        raise EmptyResult(f"every per-label count floors to 0 at Z={z}")
    return np.sort(np.array(chosen, dtype=np.int64))


def sample(pool: Dataset, labels, z: float, stream: rng.RngStream) -> Dataset:
    return pool.subset(sample_indices(pool, labels, z, stream))


def draw(pool: Dataset, spec: SamplingSpec, counterpart_of=None) -> tuple[Dataset, tuple]:
    """Draw a training set for ``spec`` and return it with its label set.

    Labels come from ``spec.anchor_labels`` when pinned; otherwise from the
    counterpart rule when ``counterpart_of`` (another label set) is given;
    otherwise uniformly.
    """
    c = pool.num_classes
    spec.check_anchor(c)
    if spec.anchor_labels is not None:
        labels = spec.anchor_labels
    elif counterpart_of is not None:
        labels = counterpart_labels(counterpart_of, c, spec.x, spec.y,
                                    rng.derive_stream(spec.seed, "sample:labels"))
    else:
        labels = label_set(c, spec.x, rng.derive_stream(spec.seed, "sample:labels"))
    data = sample(pool, labels, spec.z, rng.derive_stream(spec.seed, "sample"))
    return data, tuple(labels)
