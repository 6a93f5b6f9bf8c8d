"""Desk-scale experiment runner: accuracy and divergence sweeps, training dynamics,
PoL spoofing and the averaging attack, written out as CSV plus JSON metadata.

Every random choice in a run is derived from the row's ``seed``:

* global pool / test split: stream ``"split"``; desk caps: ``"cap:pool"``, ``"cap:test"``
* role sampling: ``SamplingSpec.seed = subseed(seed, "role:<role>")``
* role noise: ``ObfuscationSpec.seed = subseed(seed, "noise:<role>")`` (shared by all sigmas)
* initial model: stream ``"init"``; batch order: ``TrainConfig.seed = seed``
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from statistics import median

import numpy as np

from . import __version__, data, rng
from .errors import ConfigError
from .metrics import fnorm, trace_compare
from .nn.model import evaluate, init_model, preset
from .nn.optim import Optimizer
from .nn.train import TrainConfig, train
from .obfuscation import ObfuscationSpec, obfuscate, reconstruct_by_averaging
from .pol import prove, spoof_trial, verify
from .sampler import SamplingSpec, draw

log = logging.getLogger(__name__)

KINDS = ("accuracy-sweep", "divergence-sweep", "dynamics", "pol-spoof", "averaging-attack")
COLUMNS = ("experiment", "seed", "role", "spec", "sigma", "metric", "value", "epoch")


def subseed(seed: int, tag: str) -> int:
    return rng.mix64(rng.mix64(seed) ^ int.from_bytes(rng.digest(tag.encode())[:8], "little"))


@dataclass(frozen=True)
class RoleSpec:
    """One dataset in an experiment.

    ``spec`` is an S-X-Y-Z string; ``same_as`` reuses another role's raw
    dataset; ``counterpart_of`` draws labels with the overlap rule against
    another role's label set; ``obfuscate`` marks whether noise is applied
    when the role is a training target.
    """

    role: str
    spec: str | None = None
    anchor_labels: tuple | None = None
    counterpart_of: str | None = None
    same_as: str | None = None
    obfuscate: bool = True

    def sampling_spec(self, seed: int) -> SamplingSpec:
        return SamplingSpec.parse(self.spec, subseed(seed, f"role:{self.role}"), self.anchor_labels)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    kind: str
    sampling: tuple
    sigmas: tuple = (0.0,)
    seeds: tuple = (1,)
    dataset: dict = field(default_factory=lambda: {"source": "mnist"})
    pool_size: int | None = 10000
    test_size: int | None = 1000
    model: str = "desk-mlp"
    epochs: int = 15
    learning_rate: float = 1e-3
    batch_size: int = 128
    optimizer: str = "adam"
    reference: str | None = None
    spoof: str | None = None
    r: float = 1.0
    clip: bool = False
    pol_k: int = 10
    threshold: float = 0.0
    disclosures: tuple = (4, 16, 64)
    output: str | None = None
    deviations: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "disclosures", tuple(int(n) for n in self.disclosures))
        object.__setattr__(self, "deviations", tuple(self.deviations))
        roles = tuple(r if isinstance(r, RoleSpec) else RoleSpec(**_role_kwargs(r)) for r in self.sampling)
        object.__setattr__(self, "sampling", roles)
        self.validate()

    def validate(self) -> None:
        if not self.sigmas or list(self.sigmas) != sorted(self.sigmas) or min(self.sigmas) < 0:
            raise ConfigError("sigma grid must be nonempty, nonnegative and ascending")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.sampling:
            raise ConfigError("at least one sampling role is required")
        names = [r.role for r in self.sampling]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate role names in {names}")
        for r in self.sampling:
            if (r.spec is None) == (r.same_as is None):
                raise ConfigError(f"role {r.role!r} needs exactly one of spec / same_as")
            for ref in (r.same_as, r.counterpart_of):
                if ref is not None and ref not in names[:names.index(r.role)]:
                    raise ConfigError(f"role {r.role!r} refers to {ref!r}, which is not an earlier role")
            if r.spec is not None:
                try:
                    SamplingSpec.parse(r.spec, 0, r.anchor_labels)
                except ValueError as exc:
                    raise ConfigError(str(exc)) from None
        needs_ref = self.kind in ("divergence-sweep", "dynamics", "pol-spoof")
        if needs_ref and self.reference not in names:
            raise ConfigError(f"{self.kind} needs 'reference' naming one of {names}")
        if self.kind in ("divergence-sweep", "dynamics") and len(names) < 2:
            raise ConfigError(f"{self.kind} needs at least one target besides the reference")
        if self.kind == "pol-spoof" and self.spoof not in names:
            raise ConfigError(f"pol-spoof needs 'spoof' naming one of {names}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("need epochs >= 0, batch_size >= 1, learning_rate > 0")
        if self.model not in ("desk-mlp", "desk-cnn", "paper-cnn"):
            raise ConfigError(f"unknown model preset {self.model!r}")

    def role(self, name: str) -> RoleSpec:
        return next(r for r in self.sampling if r.role == name)

    def train_config(self, seed: int, **kw) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                           batch_size=self.batch_size, optimizer=Optimizer(self.optimizer),
                           seed=seed, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sampling"] = [{k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(r).items()}
                         for r in self.sampling]
        for key in ("sigmas", "seeds", "disclosures", "deviations"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha1(f"{__version__}\n{blob}".encode()).hexdigest()


def _role_kwargs(d: dict) -> dict:
    d = dict(d)
    if d.get("anchor_labels") is not None:
        d["anchor_labels"] = tuple(d["anchor_labels"])
    allowed = set(RoleSpec.__dataclass_fields__)
    if set(d) - allowed:
        raise ConfigError(f"unknown sampling fields {sorted(set(d) - allowed)}")
    return d


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return ExperimentConfig.from_dict(raw)


def preset_config(name: str) -> ExperimentConfig:
    text = resources.files("dataset_obfuscation.presets").joinpath(f"{name}.json").read_text()
    return ExperimentConfig.from_dict(json.loads(text))


PRESET_NAMES = ("exp1", "exp2", "exp3", "exp4", "dynamics")


# ------------------------------------------------------------------ tables

@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    columns: tuple = COLUMNS

    def add(self, experiment, seed, role, spec, sigma, metric, value, epoch=None):
        value = float(value)
        if not np.isfinite(value):
            raise ValueError(f"non-finite {metric} value for {role} at sigma={sigma}")
        self.rows.append((experiment, int(seed), role, str(spec), float(sigma), metric, value,
                          None if epoch is None else int(epoch)))

    def sort(self) -> None:
        self.rows.sort(key=lambda r: (r[0], r[3], r[4], r[1], r[2], r[5], -1 if r[7] is None else r[7]))

    def select(self, **where) -> list:
        idx = {c: i for i, c in enumerate(self.columns)}
        return [r for r in self.rows if all(r[idx[k]] == v for k, v in where.items())]

    def values(self, **where) -> list:
        return [r[6] for r in self.select(**where)]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def to_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def emit(table: ResultTable, path) -> Path:
    """Write ``path`` as CSV and ``<path stem>.meta.json`` beside it; returns the sidecar path."""
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    with open(path, "w", newline="") as fh:
        fh.write(to_csv(table))
    meta = path.with_suffix(".meta.json")
    meta.write_text(json.dumps(table.metadata, sort_keys=True, indent=2) + "\n")
    return meta


def read_csv(path) -> ResultTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        rows = []
        for r in reader:
            rows.append((r[0], int(r[1]), r[2], r[3], float(r[4]), r[5], float(r[6]),
                         int(r[7]) if r[7] else None))
    return ResultTable(rows, {}, header)


# ------------------------------------------------------------ data plumbing

@lru_cache(maxsize=4)
def _load_source(source: str, path: str | None, extra: str) -> data.Dataset:
    if source == "mnist":
        return data.load_mnist(_data_dir(path, "mnist"))
    if source == "cifar10":
        d = _data_dir(path, "cifar-10-batches-bin")
        return data.load_cifar10([d / f"data_batch_{i}.bin" for i in range(1, 6)])
    if source == "synthetic":
        p = json.loads(extra)
        return data.synth_blobs(p.get("classes", 10), p.get("per_class", 100), p.get("dim", 16),
                                p.get("spread", 0.1), rng.derive_stream(p.get("seed", 0), "synth"))
    raise ConfigError(f"unknown dataset source {source!r}")


def _data_dir(path: str | None, sub: str) -> Path:
    if path:
        p = Path(path)
    else:
        root = os.environ.get("DSOBF_DATA_DIR")
        if not root:
            raise ConfigError(f"no dataset path given and DSOBF_DATA_DIR is unset (looking for {sub}/)")
        p = Path(root) / sub
    if not p.is_dir():
        raise ConfigError(f"dataset directory {p} does not exist")
    return p


def global_split(config: ExperimentConfig, seed: int) -> tuple[data.Dataset, data.Dataset]:
    """The 90/10 global pool / test split for ``seed``, after desk caps."""
    ds = config.dataset
    extra = json.dumps({k: v for k, v in ds.items() if k not in ("source", "path")}, sort_keys=True)
    full = _load_source(ds.get("source", "mnist"), ds.get("path"), extra)
    pool, test = data.split(full, 0.9, rng.derive_stream(seed, "split"))
    pool = data.cap(pool, config.pool_size, rng.derive_stream(seed, "cap:pool"))
    test = data.cap(test, config.test_size, rng.derive_stream(seed, "cap:test"))
    return pool, test


def draw_roles(config: ExperimentConfig, pool: data.Dataset, seed: int) -> dict:
    """Raw dataset, label set and spec string for every role, in config order."""
    out = {}
    for r in config.sampling:
        if r.same_as is not None:
            out[r.role] = out[r.same_as]
            continue
        spec = r.sampling_spec(seed)
        anchor = out[r.counterpart_of][1] if r.counterpart_of else None
        ds, labels = draw(pool, spec, counterpart_of=anchor)
        out[r.role] = (ds, labels, str(spec))
    return out


def noisy(config: ExperimentConfig, ds: data.Dataset, role: str, sigma: float, seed: int) -> data.Dataset:
    return obfuscate(ds, ObfuscationSpec(sigma, config.r, config.clip, subseed(seed, f"noise:{role}")))


# ------------------------------------------------------------------ kinds

def run_accuracy_sweep(config: ExperimentConfig) -> ResultTable:
    _expect(config, "accuracy-sweep")
    table = _new_table(config)
    for seed in config.seeds:
        pool, test = global_split(config, seed)
        roles = draw_roles(config, pool, seed)
        init = init_model(preset(config.model, pool.shape, pool.num_classes), rng.derive_stream(seed, "init"))
        cfg = config.train_config(seed)
        for r in config.sampling:
            ds, _, spec = roles[r.role]
            for sigma in config.sigmas:
                w, _ = train(init, noisy(config, ds, r.role, sigma, seed), cfg)
                table.add(config.experiment, seed, r.role, spec, sigma, "accuracy", evaluate(w, test))
                table.add(config.experiment, seed, r.role, spec, sigma, "train_size", len(ds))
    return _finish(table)


def run_divergence_sweep(config: ExperimentConfig) -> ResultTable:
    _expect(config, "divergence-sweep")
    table = _new_table(config)
    targets = [r for r in config.sampling if r.role != config.reference]
    for seed in config.seeds:
        pool, test = global_split(config, seed)
        roles = draw_roles(config, pool, seed)
        init = init_model(preset(config.model, pool.shape, pool.num_classes), rng.derive_stream(seed, "init"))
        cfg = config.train_config(seed)
        w_ref, _ = train(init, roles[config.reference][0], cfg)
        for sigma in config.sigmas:
            dist = {}
            for r in targets:
                ds, _, spec = roles[r.role]
                s = sigma if r.obfuscate else 0.0
                w, _ = train(init, noisy(config, ds, r.role, s, seed), cfg)
                dist[r.role] = fnorm(w_ref, w)
                table.add(config.experiment, seed, r.role, spec, sigma, "fnorm", dist[r.role])
                table.add(config.experiment, seed, r.role, spec, sigma, "accuracy", evaluate(w, test))
            for i, a in enumerate(targets):
                for b in targets[i + 1:]:
                    table.add(config.experiment, seed, f"{a.role}~{b.role}", roles[b.role][2], sigma,
                              "delta", abs(dist[a.role] - dist[b.role]))
    return _finish(table)


def run_dynamics(config: ExperimentConfig) -> ResultTable:
    _expect(config, "dynamics")
    table = _new_table(config)
    for seed in config.seeds:
        pool, test = global_split(config, seed)
        roles = draw_roles(config, pool, seed)
        init = init_model(preset(config.model, pool.shape, pool.num_classes), rng.derive_stream(seed, "init"))
        init_acc = evaluate(init, test)
        cfg = config.train_config(seed)
        ref_ds, _, ref_spec = roles[config.reference]
        _, ref_trace = train(init, ref_ds, cfg, test)
        _accuracy_rows(table, config, seed, config.reference, ref_spec, 0.0, init_acc, ref_trace)
        for r in config.sampling:
            if r.role == config.reference:
                continue
            ds, _, spec = roles[r.role]
            for sigma in (config.sigmas if r.obfuscate else (0.0,)):
                _, trace = train(init, noisy(config, ds, r.role, sigma, seed), cfg, test)
                _accuracy_rows(table, config, seed, r.role, spec, sigma, init_acc, trace)
                for epoch, d in enumerate(trace_compare(ref_trace.weights, trace.weights), start=1):
                    table.add(config.experiment, seed, r.role, spec, sigma, "fnorm", d, epoch)
    return _finish(table)


def _accuracy_rows(table, config, seed, role, spec, sigma, init_acc, trace):
    table.add(config.experiment, seed, role, spec, sigma, "accuracy", init_acc, 0)
    for rec in trace.records:
        table.add(config.experiment, seed, role, spec, sigma, "accuracy", rec.accuracy, rec.epoch)


def run_pol_spoof(config: ExperimentConfig) -> ResultTable:
    _expect(config, "pol-spoof")
    table = _new_table(config)
    for seed in config.seeds:
        pool, _ = global_split(config, seed)
        roles = draw_roles(config, pool, seed)
        init = init_model(preset(config.model, pool.shape, pool.num_classes), rng.derive_stream(seed, "init"))
        cfg = config.train_config(seed)
        anchor, _, spec = roles[config.reference]
        spoof_raw, _, spoof_spec = roles[config.spoof]
        for sigma in config.sigmas:
            genuine = noisy(config, anchor, config.reference, sigma, seed)
            _, transcript = prove(init, genuine, cfg, config.pol_k)
            honest = verify(transcript, genuine, threshold=config.threshold)
            d, verdict = spoof_trial(transcript, noisy(config, spoof_raw, config.spoof, sigma, seed),
                                     config.threshold)
            exp = config.experiment
            table.add(exp, seed, config.reference, spec, sigma, "honest_max_d", max(honest.distances, default=0.0))
            table.add(exp, seed, config.reference, spec, sigma, "honest_accept", honest.accepted)
            table.add(exp, seed, config.spoof, spoof_spec, sigma, "spoof_min_d", min(d, default=0.0))
            table.add(exp, seed, config.spoof, spoof_spec, sigma, "spoof_median_d", median(d) if d else 0.0)
            table.add(exp, seed, config.spoof, spoof_spec, sigma, "spoof_max_d", max(d, default=0.0))
            table.add(exp, seed, config.spoof, spoof_spec, sigma, "spoof_accept", verdict.accepted)
    return _finish(table)


def run_averaging_attack(config: ExperimentConfig) -> ResultTable:
    _expect(config, "averaging-attack")
    table = _new_table(config)
    r = config.sampling[0]
    for seed in config.seeds:
        pool, _ = global_split(config, seed)
        ds, _, spec = draw_roles(config, pool, seed)[r.role]
        for sigma in config.sigmas:
            for n in config.disclosures:
                shares = (obfuscate(ds, ObfuscationSpec(sigma, config.r, config.clip,
                                                        subseed(seed, f"disclosure:{r.role}:{i}")))
                          for i in range(n))
                _, mse = reconstruct_by_averaging(shares, ds)
                table.add(config.experiment, seed, r.role, spec, sigma, f"recon_mse_n{n}", mse)
    return _finish(table)


RUNNERS = {
    "accuracy-sweep": run_accuracy_sweep,
    "divergence-sweep": run_divergence_sweep,
    "dynamics": run_dynamics,
    "pol-spoof": run_pol_spoof,
    "averaging-attack": run_averaging_attack,
}


def run(config: ExperimentConfig, output=None) -> ResultTable:
    table = RUNNERS[config.kind](config)
    out = output or config.output
    if out:
        emit(table, out)
    return table


def _expect(config: ExperimentConfig, kind: str) -> None:
    if config.kind != kind:
        raise ConfigError(f"config kind is {config.kind!r}, expected {kind!r}")


def _new_table(config: ExperimentConfig) -> ResultTable:
    return ResultTable(metadata={
        "config": config.to_dict(),
        "run_fingerprint": config.fingerprint(),
        "deviations": list(config.deviations),
        "version": __version__,
    })


def _finish(table: ResultTable) -> ResultTable:
    table.sort()
    return table
