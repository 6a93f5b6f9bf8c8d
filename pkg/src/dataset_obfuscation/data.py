"""Datasets: on-disk loaders (IDX, CIFAR-10 binary), splitting and fixtures."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from ._exact import floor_mul
from .errors import (
    BadRecordLength,
    CountMismatch,
    EmptyDataset,
    LabelOutOfRange,
    ShapeMismatch,
    TruncatedFile,
    WrongMagic,
)

IDX_IMAGES_U8 = 0x00000803
IDX_LABELS_U8 = 0x00000801
# float and multi-channel variants written by save_idx
_IMAGE_MAGICS = {(code << 8) | ndim for code in (0x08, 0x0D, 0x0E) for ndim in (3, 4)}

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v: k for k, v in _IDX_DTYPES.items()}

CIFAR_RECORD = 3073


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Labeled samples, features flattened row-major from ``shape`` (H, W, C)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    shape: tuple = ()
    name: str = ""

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ShapeMismatch(f"features must be 2-D, got shape {feats.shape}")
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(labels) != len(feats):
            raise ShapeMismatch(f"{len(feats)} feature rows vs {len(labels)} labels")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.num_classes):
            bad = labels[(labels < 0) | (labels >= self.num_classes)][0]
            raise LabelOutOfRange(int(bad))
        shape = tuple(int(s) for s in self.shape) or (1, feats.shape[1], 1)
        if int(np.prod(shape)) != feats.shape[1]:
            raise ShapeMismatch(f"shape {shape} does not match {feats.shape[1]} features")
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "shape", shape)

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes,
                       self.shape, self.name if name is None else name)

    def with_features(self, features: np.ndarray, name: str | None = None) -> "Dataset":
        return Dataset(features, self.labels, self.num_classes, self.shape,
                       self.name if name is None else name)

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def canonical_bytes(self) -> bytes:
        """Platform-independent serialization used for commitments (name excluded)."""
        head = struct.pack("<4sQQQB", b"DSET", len(self), self.dim, self.num_classes, len(self.shape))
        head += struct.pack(f"<{len(self.shape)}Q", *self.shape)
        return (head + self.labels.astype("<i8").tobytes()
                + self.features.astype("<f8").tobytes())


# --------------------------------------------------------------------- IDX

def read_idx(path) -> np.ndarray:
    """Read any IDX file into a native-endian array of its stored dtype."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: no IDX header")
    magic = int.from_bytes(raw[:4], "big")
    code, ndim = raw[2], raw[3]
    if raw[:2] != b"\x00\x00" or code not in _IDX_DTYPES or ndim == 0:
        raise WrongMagic(magic)
    if len(raw) < 4 + 4 * ndim:
        raise TruncatedFile(f"{path}: header promises {ndim} dims")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    dt = _IDX_DTYPES[code]
    count = int(np.prod(dims))
    start = 4 + 4 * ndim
    if len(raw) - start < count * dt.itemsize:
        raise TruncatedFile(f"{path}: payload has {len(raw) - start} bytes, "
                            f"header promises {count * dt.itemsize}")
    arr = np.frombuffer(raw, dtype=dt, count=count, offset=start)
    return arr.astype(dt.newbyteorder("="), copy=True).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = _IDX_CODES.get(array.dtype.newbyteorder(">"))
    if code is None:
        raise ValueError(f"dtype {array.dtype} has no IDX type code")
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(array.astype(_IDX_DTYPES[code], copy=False).tobytes())


def load_idx(image_path, label_path, num_classes: int = 10, name: str | None = None) -> Dataset:
    """Load an IDX image/label pair.

    Unsigned-byte images are scaled by 1/255 into [0, 1]; float images
    (written by :func:`save_idx` for obfuscated data) are taken as-is.
    """
    img_raw = Path(image_path).read_bytes()[:4]
    lab_raw = Path(label_path).read_bytes()[:4]
    img_magic = int.from_bytes(img_raw, "big") if len(img_raw) == 4 else -1
    lab_magic = int.from_bytes(lab_raw, "big") if len(lab_raw) == 4 else -1
    if img_magic not in _IMAGE_MAGICS:
        if img_magic < 0:
            raise TruncatedFile(f"{image_path}: no IDX header")
        raise WrongMagic(img_magic, IDX_IMAGES_U8)
    if lab_magic != IDX_LABELS_U8:
        if lab_magic < 0:
            raise TruncatedFile(f"{label_path}: no IDX header")
        raise WrongMagic(lab_magic, IDX_LABELS_U8)
    images = read_idx(image_path)
    labels = read_idx(label_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(images.shape[0], labels.shape[0])
    n, h, w = images.shape[:3]
    c = images.shape[3] if images.ndim == 4 else 1
    feats = images.reshape(n, h * w * c).astype(np.float64)
    if images.dtype == np.uint8:
        feats /= 255.0
    return Dataset(feats, labels.astype(np.int64), num_classes, (h, w, c),
                   name if name is not None else Path(image_path).name)


def _is_byte_grid(features: np.ndarray) -> bool:
    q = np.rint(features * 255.0)
    return bool(np.all((q >= 0) & (q <= 255)) and np.array_equal(q / 255.0, features))


def save_idx(dataset: Dataset, image_path, label_path, float_format: bool | None = None) -> None:
    """Write a dataset as an IDX pair.

    Features that sit exactly on the k/255 grid are stored as unsigned bytes;
    anything else (obfuscated data) is stored as big-endian float64 so the
    round trip is bit-exact.
    """
    h, w, c = dataset.shape
    dims = (len(dataset), h, w) if c == 1 else (len(dataset), h, w, c)
    if float_format is None:
        float_format = not _is_byte_grid(dataset.features)
    if float_format:
        images = dataset.features.reshape(dims)
    else:
        images = np.rint(dataset.features * 255.0).astype(np.uint8).reshape(dims)
    if dataset.num_classes > 256:
        raise ShapeMismatch("IDX labels are single bytes")
    write_idx(image_path, images)
    write_idx(label_path, dataset.labels.astype(np.uint8))


def load_mnist(directory, which: str = "train") -> Dataset:
    prefix = "train" if which == "train" else "t10k"
    d = Path(directory)
    return load_idx(d / f"{prefix}-images-idx3-ubyte", d / f"{prefix}-labels-idx1-ubyte",
                    name=f"mnist-{which}")


# ----------------------------------------------------------------- CIFAR-10

def load_cifar10(batch_paths) -> Dataset:
    """Concatenate CIFAR-10 binary batches (1 label byte + 3072 planar RGB bytes per record).

    Pixels are reordered to height x width x channel to match the flattened
    layout used elsewhere.
    """
    feats, labels = [], []
    for p in batch_paths:
        raw = Path(p).read_bytes()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise BadRecordLength(p, len(raw))
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        lab = rec[:, 0].astype(np.int64)
        if lab.max() >= 10:
            raise LabelOutOfRange(int(lab[lab >= 10][0]))
        px = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1).reshape(-1, 3072)
        feats.append(px.astype(np.float64) / 255.0)
        labels.append(lab)
    if not feats:
        raise EmptyDataset("no CIFAR-10 batch files given")
    return Dataset(np.concatenate(feats), np.concatenate(labels), 10, (32, 32, 3), "cifar10")


# ------------------------------------------------------------ split / synth

def split(dataset: Dataset, train_fraction: float, stream: rng.RngStream) -> tuple[Dataset, Dataset]:
    """Uniform random split; train keeps floor(n * fraction) rows.

    Both halves keep the original relative row order.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(dataset)
    if n == 0:
        raise EmptyDataset("cannot split an empty dataset")
    perm = rng.permutation(stream, n)
    k = floor_mul(n, train_fraction)
    train_idx = np.sort(perm[:k])
    test_idx = np.sort(perm[k:])
    return (dataset.subset(train_idx, f"{dataset.name}:train"),
            dataset.subset(test_idx, f"{dataset.name}:test"))


def cap(dataset: Dataset, max_rows: int | None, stream: rng.RngStream) -> Dataset:
    """Uniform subsample of at most ``max_rows`` rows (order preserved)."""
    if max_rows is None or len(dataset) <= max_rows:
        return dataset
    idx = np.sort(rng.permutation(stream, len(dataset))[:max_rows])
    return dataset.subset(idx)


def blob_centers(num_classes: int, dim: int) -> np.ndarray:
    j = np.arange(dim, dtype=np.float64) + 1.0
    c = np.arange(num_classes, dtype=np.float64)[:, None]
    return 0.5 + 0.4 * np.cos(2.0 * np.pi * c * j / num_classes + np.pi / 4 + c)


def synth_blobs(num_classes: int, per_class: int, dim: int, spread: float,
                stream: rng.RngStream) -> Dataset:
    """Gaussian blobs around fixed per-class cosine patterns in [0.1, 0.9]^dim."""
    if num_classes < 2 or per_class < 1 or dim < 1:
        raise ValueError("need num_classes >= 2, per_class >= 1, dim >= 1")
    centers = blob_centers(num_classes, dim)
    labels = np.repeat(np.arange(num_classes), per_class)
    jitter = rng.gaussians(stream, spread, len(labels) * dim).reshape(len(labels), dim)
    return Dataset(centers[labels] + jitter, labels, num_classes, (1, dim, 1),
                   f"blobs-{num_classes}x{per_class}x{dim}")
