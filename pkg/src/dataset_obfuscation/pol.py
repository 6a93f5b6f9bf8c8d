"""Proof-of-Learning: checkpointed training (prover) and segment replay (verifier).

Segment ``i`` runs from checkpoint ``i`` to checkpoint ``i + 1``.  Because
training is bit-deterministic, an honest replay reproduces checkpoint
``i + 1`` exactly, so the acceptance threshold can be 0.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .errors import ArchMismatch, CommitmentMismatch, FormatError, SegmentOutOfRange, ShapeError
from .metrics import fnorm
from .nn import checkpoint as ckpt_io
from .nn.model import ModelArch, ModelWeights
from .nn.optim import OptState
from .nn.train import Checkpoint, TrainConfig, replay, train

MAGIC = b"OPOL"
VERSION = 1


def commitment(dataset) -> bytes:
    return rng.digest(dataset.canonical_bytes())


@dataclass
class PoLTranscript:
    dataset_commitment: bytes
    arch: ModelArch
    config: TrainConfig
    k: int
    checkpoints: list = field(default_factory=list)

    @property
    def arch_fingerprint(self) -> bytes:
        return self.arch.fingerprint

    @property
    def num_segments(self) -> int:
        return len(self.checkpoints) - 1

    def steps(self) -> list[int]:
        return [c.step for c in self.checkpoints]


@dataclass
class Verdict:
    accepted: bool
    distances: list
    segments: list
    threshold: float

    def to_json(self) -> dict:
        return {"accepted": self.accepted, "threshold": self.threshold,
                "segments": list(self.segments), "distances": list(self.distances)}


def prove(init: ModelWeights, dataset, config: TrainConfig, k: int) -> tuple[ModelWeights, PoLTranscript]:
    if k < 1:
        raise ValueError("checkpoint interval k must be >= 1")
    config = replace(config, checkpoint_every=k)
    final, trace = train(init, dataset, config)
    checkpoints = trace.checkpoints or [Checkpoint(0, init, config.optimizer.init_state(init.mutable()))]
    return final, PoLTranscript(commitment(dataset), init.arch, config, k, checkpoints)


def _segments(transcript: PoLTranscript, segments) -> list[int]:
    if segments is None:
        return list(range(transcript.num_segments))
    segments = [int(s) for s in segments]
    for s in segments:
        if not 0 <= s < transcript.num_segments:
            raise SegmentOutOfRange(f"segment {s} not in [0, {transcript.num_segments})")
    return segments


def _check_arch(transcript: PoLTranscript) -> None:
    for c in transcript.checkpoints:
        if c.weights.arch_fingerprint != transcript.arch_fingerprint:
            raise ArchMismatch(f"checkpoint at step {c.step} has a different architecture")


def _replay_distances(transcript: PoLTranscript, dataset, segments) -> list[float]:
    cks = transcript.checkpoints
    out = []
    for i in segments:
        start, end = cks[i], cks[i + 1]
        replayed, _ = replay(start.weights, start.opt_state, dataset, transcript.config,
                             start.step, end.step)
        out.append(fnorm(replayed, end.weights))
    return out


def verify(transcript: PoLTranscript, dataset, segments=None, threshold: float = 0.0) -> Verdict:
    """Replay the chosen segments (default all) on ``dataset``.

    The dataset digest is checked first; a mismatch raises
    :class:`CommitmentMismatch` before any replay work.
    """
    segments = _segments(transcript, segments)
    if commitment(dataset) != transcript.dataset_commitment:
        raise CommitmentMismatch("dataset digest differs from the transcript commitment")
    _check_arch(transcript)
    d = _replay_distances(transcript, dataset, segments)
    return Verdict(all(x <= threshold for x in d), d, segments, threshold)


def spoof_trial(anchor_transcript: PoLTranscript, spoof_dataset, threshold: float,
                segments=None) -> tuple[list, Verdict]:
    """Replay the anchor's checkpoints against a different dataset, skipping the hash check.

    Models a prover who commits to ``spoof_dataset`` but presents stolen
    checkpoints; the returned distances measure how visible the swap is.
    """
    arch = anchor_transcript.arch
    if spoof_dataset.dim != int(np.prod(arch.input_shape)) or spoof_dataset.num_classes != arch.num_classes:
        raise ShapeError("spoof dataset does not fit the transcript architecture")
    segments = _segments(anchor_transcript, segments)
    _check_arch(anchor_transcript)
    d = _replay_distances(anchor_transcript, spoof_dataset, segments)
    return d, Verdict(all(x <= threshold for x in d), d, segments, threshold)


# ------------------------------------------------------------ file format

def dumps(transcript: PoLTranscript) -> bytes:
    """Serialize: header (version, fingerprint, config JSON, k, commitment), then checkpoints."""
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", VERSION) + transcript.arch_fingerprint)
    cfg = json.dumps({"arch": transcript.arch.to_dict(), "train": transcript.config.to_dict()},
                     sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<I", len(cfg)) + cfg)
    buf.write(struct.pack("<Q", transcript.k) + transcript.dataset_commitment)
    buf.write(struct.pack("<I", len(transcript.checkpoints)))
    for c in transcript.checkpoints:
        w = ckpt_io.dumps(c.weights)
        sbuf = io.BytesIO()
        ckpt_io.write_tensors(sbuf, transcript.arch, c.opt_state.to_tensors())
        s = sbuf.getvalue()
        buf.write(struct.pack("<QQ", c.step, len(w)) + w + struct.pack("<Q", len(s)) + s)
    return buf.getvalue()


def loads(data: bytes) -> PoLTranscript:
    fh = io.BytesIO(data)

    def read(n):
        b = fh.read(n)
        if len(b) != n:
            raise FormatError("truncated transcript")
        return b

    if read(4) != MAGIC:
        raise FormatError("not a transcript file")
    (version,) = struct.unpack("<I", read(4))
    if version != VERSION:
        raise FormatError(f"unsupported transcript version {version}")
    fingerprint = read(32)
    (clen,) = struct.unpack("<I", read(4))
    cfg = json.loads(read(clen))
    arch = ModelArch.from_dict(cfg["arch"])
    if arch.fingerprint != fingerprint:
        raise FormatError("architecture does not match the header fingerprint")
    config = TrainConfig.from_dict(cfg["train"])
    (k,) = struct.unpack("<Q", read(8))
    commit = read(32)
    (count,) = struct.unpack("<I", read(4))
    checkpoints = []
    for _ in range(count):
        step, wlen = struct.unpack("<QQ", read(16))
        weights = ckpt_io.loads(read(wlen))
        (slen,) = struct.unpack("<Q", read(8))
        _, tensors = ckpt_io.read_tensors(io.BytesIO(read(slen)))
        checkpoints.append(Checkpoint(step, weights, OptState.from_tensors(tensors)))
    return PoLTranscript(commit, arch, config, k, checkpoints)


def save(transcript: PoLTranscript, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(transcript))


def load(path) -> PoLTranscript:
    with open(path, "rb") as fh:
        return loads(fh.read())
