"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

MNIST is read from ``$DSOBF_DATA_DIR/mnist`` (or ``/root/data/mnist``); the
MNIST-backed criteria skip with a reason when it is absent.
"""
import json
import statistics
import subprocess
import sys
import time
from decimal import Decimal
from math import floor

import numpy as np
import pytest

from dataset_obfuscation import data, harness, pol, rng, sampler
from dataset_obfuscation.errors import CommitmentMismatch, EmptyResult, InfeasibleOverlap
from dataset_obfuscation.harness import ExperimentConfig
from dataset_obfuscation.metrics import fnorm
from dataset_obfuscation.nn import (
    Conv2D, Dense, Flatten, MaxPool, ModelArch, ReLU, SoftmaxCrossEntropyHead, TrainConfig,
    checkpoint, init_model, loss_and_grads, preset, train,
)
from dataset_obfuscation.nn.layers import softmax_cross_entropy
from dataset_obfuscation.nn.train import Checkpoint
from dataset_obfuscation.obfuscation import ObfuscationSpec, obfuscate
from dataset_obfuscation.sampler import SamplingSpec

from conftest import MNIST_FILES, mnist_dir

SEEDS = [1, 2, 3]


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, seconds=None):
        timing = "" if seconds is None else f" [{seconds:.1f}s]"
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}{timing}", flush=True)
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def mnist_root(tmp_path_factory):
    d = mnist_dir()
    if d is None:
        pytest.skip("MNIST not found; set DSOBF_DATA_DIR to a directory containing mnist/")
    return str(d)


def desk(mnist_root, **kw):
    """Desk setup: 5,000 MNIST train rows, 1,000 test rows, desk-mlp, 15 epochs, 3 seeds."""
    base = dict(experiment="acceptance", dataset={"source": "mnist", "path": mnist_root},
                pool_size=5000, test_size=1000, model="desk-mlp", epochs=15, learning_rate=1e-3,
                batch_size=128, seeds=SEEDS)
    base.update(kw)
    return ExperimentConfig.from_dict(base)


# ---------------------------------------------------------------- 1

def test_criterion_1_determinism(report, mnist_root, tmp_path):
    start = time.perf_counter()
    pool = data.load_mnist(mnist_root)
    ds = data.cap(pool, 1000, rng.derive_stream(1, "cap"))
    init = init_model(preset("desk-mlp", ds.shape), rng.derive_stream(1, "init"))
    cfg = TrainConfig(epochs=2, learning_rate=1e-3, batch_size=64, seed=1)
    a, _ = train(init, ds, cfg)
    b, _ = train(init, ds, cfg)
    d = fnorm(a, b)

    config = desk(mnist_root, kind="accuracy-sweep", sampling=[{"role": "A", "spec": "S-1-1-0.2"}],
                  sigmas=[0.0, 0.5], seeds=[1], epochs=2, pool_size=2000, test_size=500)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config.to_dict()))
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.csv"
        subprocess.run([sys.executable, "-m", "dataset_obfuscation", "exp", "run", "--output", str(out),
                        str(path)], check=True, capture_output=True)
        outputs.append(out.read_bytes())
    elapsed = time.perf_counter() - start
    ok = d == 0.0 and outputs[0] == outputs[1] and elapsed < 120
    report(1, ok, f"F-norm between repeated runs = {d!r}; CSVs from two processes byte-identical = "
                  f"{outputs[0] == outputs[1]} ({len(outputs[0])} bytes)", elapsed)


# ---------------------------------------------------------------- 2

H = 1e-5


def _fd(f, x):
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + H
        up = f()
        flat[i] = old - H
        down = f()
        flat[i] = old
        gf[i] = (up - down) / (2 * H)
    return g


def _rel(a, n):
    return float((np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), 1e-7)).max())


def test_criterion_2_gradient_correctness(report):
    start = time.perf_counter()
    s = rng.derive_stream(0, "acceptance-fd")
    cases = {
        "conv2d-same": (Conv2D(3, (3, 3)), (3, 5, 5, 2)),
        "conv2d-valid-stride2": (Conv2D(2, (3, 2), stride=2, padding="valid"), (3, 6, 5, 2)),
        "maxpool": (MaxPool(2, 2), (3, 4, 6, 2)),
        "relu": (ReLU(), (3, 4, 3)),
        "flatten": (Flatten(), (3, 2, 3, 2)),
        "dense": (Dense(4), (3, 5)),
    }
    worst = {}
    for name, (layer, shape) in cases.items():
        x = rng.gaussians(s, 1.0, int(np.prod(shape))).reshape(shape)
        if name == "relu":
            x = np.where(np.abs(x) < 0.05, 0.1, x)
        pshapes = layer.param_shapes(shape[1:]) if hasattr(layer, "param_shapes") else {}
        params = {k: rng.gaussians(s, 0.5, int(np.prod(v))).reshape(v) for k, v in pshapes.items()}
        out, cache = layer.forward(params, x)
        proj = rng.gaussians(s, 1.0, out.size).reshape(out.shape)
        f = lambda: float(np.sum(layer.forward(params, x)[0] * proj))  # noqa: E731
        dx, grads = layer.backward(params, cache, proj)
        errs = [_rel(dx, _fd(f, x))] + [_rel(grads[k], _fd(f, p)) for k, p in params.items()]
        worst[name] = max(errs)
    logits = rng.gaussians(s, 1.0, 15).reshape(3, 5)
    labels = np.array([0, 4, 2])
    worst["softmax-ce-head"] = _rel(softmax_cross_entropy(logits, labels)[1],
                                    _fd(lambda: softmax_cross_entropy(logits, labels)[0], logits))
    arch = ModelArch((4, 4, 1), (Conv2D(2), ReLU(), MaxPool(), Flatten(), Dense(3), SoftmaxCrossEntropyHead(3)))
    w = init_model(arch, rng.derive_stream(0, "init"))
    params = w.mutable()
    params["layer0.bias"] += 0.05
    xb = rng.gaussians(s, 1.0, 48).reshape(3, 16) + 0.5
    yb = np.array([0, 1, 2])
    _, grads = loss_and_grads(w, xb, yb, params)
    worst["whole-model"] = max(_rel(grads[k], _fd(lambda: loss_and_grads(w, xb, yb, params)[0], p))
                               for k, p in params.items())
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(2, ok, f"max elementwise relative error (limit 1e-4): {detail}", elapsed)


# ---------------------------------------------------------------- 3

def test_criterion_3_obfuscation(report):
    base = rng.derive_stream(0, "acceptance-base")
    ds = data.Dataset(base.uniform(10 ** 6).reshape(1000, 1000), np.arange(1000) % 10, 10)
    ident_sigma = obfuscate(ds, ObfuscationSpec(0.0, 1.0, seed=9))
    ident_r = obfuscate(ds, ObfuscationSpec(2.5, 0.0, seed=9))
    identity = (ident_sigma.features.tobytes() == ds.features.tobytes()
                and ident_r.features.tobytes() == ds.features.tobytes())
    out = obfuscate(ds, ObfuscationSpec(1.0, 1.0, clip=False, seed=9))
    resid = out.features - ds.features
    mean, var = float(resid.mean()), float(resid.var())
    labels = all(np.array_equal(o.labels, ds.labels) for o in (ident_sigma, ident_r, out))
    ok = identity and labels and -0.005 <= mean <= 0.005 and 0.99 <= var <= 1.01
    report(3, ok, f"identities exact={identity}, residual mean={mean:.5f}, var={var:.5f} over 1e6 "
                  f"features, labels preserved={labels}")


# ---------------------------------------------------------------- 4

def _dfloor(*f):
    p = Decimal(1)
    for v in f:
        p *= Decimal(str(v))
    return floor(p)


def _check_draw(pool, ds, labels, k, z):
    rows = ds.features[:, 0].astype(int)  # feature = pool row id
    counts_ok = all(int(np.sum(ds.labels == l)) == _dfloor(z, int(np.sum(pool.labels == l))) for l in labels)
    return (len(labels) == k and counts_ok and len(set(rows)) == len(rows)
            and np.array_equal(pool.labels[rows], ds.labels) and set(ds.labels) <= set(labels))


def _draw_or_empty(pool, labels, z, stream):
    try:
        return sampler.sample(pool, labels, float(z), stream)
    except EmptyResult:
        return None


def test_criterion_4_sampler_exactness(report):
    start = time.perf_counter()
    checked = 0
    failures = []
    grid = ["0.1", "0.2", "0.5", "0.625", "0.8", "1"]
    for seed in range(4):
        s = rng.derive_stream(seed, "acceptance-pool")
        n = 200 - 37 * seed
        labels = (s.next_u64(n) % np.uint64(10)).astype(np.int64)
        pool = data.Dataset(np.arange(n, dtype=np.float64)[:, None], labels, 10)
        for x in grid:
            k = _dfloor(10, x)
            for z in grid:
                # uniform label draw through the public entry point
                try:
                    ds, anchor = sampler.draw(pool, SamplingSpec(float(x), 1.0, float(z), seed))
                    if not _check_draw(pool, ds, anchor, k, z):
                        failures.append((seed, x, z))
                except EmptyResult:
                    pass
                anchor = tuple(sorted(rng.choose(rng.derive_stream(seed, f"anchor:{x}"), range(10), k)))
                for y in ["0", "0.1", "0.5", "1"]:
                    shared = _dfloor(10, x, y)
                    stream = rng.derive_stream(seed, f"cp:{x}:{y}:{z}")
                    if k - shared > 10 - k:
                        try:
                            sampler.counterpart_labels(anchor, 10, float(x), float(y), stream)
                            failures.append((seed, x, y, z, "expected InfeasibleOverlap"))
                        except InfeasibleOverlap:
                            checked += 1
                        continue
                    lab = sampler.counterpart_labels(anchor, 10, float(x), float(y), stream)
                    if len(set(lab) & set(anchor)) != shared:
                        failures.append((seed, x, y, z, "overlap"))
                    for ls in (anchor, lab):
                        ds = _draw_or_empty(pool, ls, z, stream)
                        empty_expected = all(_dfloor(z, int(np.sum(labels == l))) == 0 for l in ls)
                        if ds is None:
                            ok = empty_expected
                        else:
                            ok = not empty_expected and _check_draw(pool, ds, ls, k, z)
                        if not ok:
                            failures.append((seed, x, y, z, ls))
                    checked += 1
    balanced = data.Dataset(np.zeros((2000, 1)), np.arange(2000) % 10, 10)
    ratios = {}
    for text in ("S-1-1-0.5", "S-0.8-1-0.625", "S-0.5-1-1", "S-0.8-1-0.1"):
        ds, _ = sampler.draw(balanced, SamplingSpec.parse(text, seed=1))
        ratios[text] = len(ds) / len(balanced)
    expected = {"S-1-1-0.5": 0.5, "S-0.8-1-0.625": 0.5, "S-0.5-1-1": 0.5, "S-0.8-1-0.1": 0.08}
    elapsed = time.perf_counter() - start
    ok = not failures and ratios == expected and elapsed < 60
    report(4, ok, f"{checked} (pool, X, Y, Z) cases match the brute-force oracle "
                  f"({len(failures)} mismatches); entry ratios {ratios}", elapsed)


# ---------------------------------------------------------------- 5

def test_criterion_5_accuracy_declines_with_noise(report, mnist_root):
    start = time.perf_counter()
    cfg = desk(mnist_root, kind="accuracy-sweep", sampling=[{"role": "T", "spec": "S-1-1-1"}],
               sigmas=[0.0, 0.4, 0.8])
    table = harness.run(cfg)
    sizes = set(table.values(metric="train_size"))
    acc = {s: [table.values(seed=s, sigma=g, metric="accuracy")[0] for g in cfg.sigmas] for s in SEEDS}
    med = [statistics.median(acc[s][i] for s in SEEDS) for i in range(3)]
    monotone = all(acc[s][i + 1] <= acc[s][i] + 0.01 for s in SEEDS for i in range(2))
    elapsed = time.perf_counter() - start
    ok = sizes == {5000.0} and med[0] >= 0.90 and med[0] - med[2] >= 0.05 and monotone and elapsed < 600
    soft = "met" if med[2] >= 0.75 else "not met"
    report(5, ok, f"median accuracy at sigma 0/0.4/0.8 = {med[0]:.4f}/{med[1]:.4f}/{med[2]:.4f}, "
                  f"drop {med[0] - med[2]:.4f}, per-seed non-increasing within 0.01 = {monotone}; "
                  f"informational: median accuracy(0.8) >= 0.75 {soft}", elapsed)


# ---------------------------------------------------------------- 6

def test_criterion_6_divergence_grows_with_noise(report, mnist_root):
    from scipy.stats import spearmanr
    start = time.perf_counter()
    cfg = desk(mnist_root, kind="divergence-sweep", reference="Tr",
               sampling=[{"role": "Tr", "spec": "S-1-1-1"}, {"role": "To", "same_as": "Tr"}],
               sigmas=[0.0, 0.25, 0.5, 0.75, 1.0])
    table = harness.run(cfg)
    rhos, zero = {}, True
    for s in SEEDS:
        d = [table.values(seed=s, sigma=g, role="To", metric="fnorm")[0] for g in cfg.sigmas]
        rhos[s] = float(spearmanr(cfg.sigmas, d)[0])
        zero &= d[0] == 0.0
    elapsed = time.perf_counter() - start
    ok = all(r >= 0.9 for r in rhos.values()) and zero and elapsed < 900
    report(6, ok, f"per-seed Spearman(sigma, D) = {rhos}; D == 0 exactly at sigma 0: {zero}", elapsed)


# ---------------------------------------------------------------- 7

def test_criterion_7_gap_narrows_with_noise(report, mnist_root):
    start = time.perf_counter()
    preset_cfg = harness.preset_config("exp3")
    cfg = ExperimentConfig.from_dict({**preset_cfg.to_dict(), "sigmas": [0.1, 1.0], "output": None,
                                      "dataset": {"source": "mnist", "path": mnist_root}})
    table = harness.run(cfg)
    pair = "To3,1~To3,3"
    med = {g: statistics.median(table.values(sigma=g, role=pair, metric="delta")) for g in cfg.sigmas}
    elapsed = time.perf_counter() - start
    ok = med[0.1] > med[1.0] and elapsed < 900
    report(7, ok, f"median delta (anchor labels 0-4 vs counterpart 4-8) at sigma 0.1 = {med[0.1]:.4f}, "
                  f"at sigma 1.0 = {med[1.0]:.4f}", elapsed)


# ---------------------------------------------------------------- 8

def test_criterion_8_pol_completeness_and_soundness(report, mnist_root, monkeypatch):
    start = time.perf_counter()
    pool = data.load_mnist(mnist_root)
    ds = data.cap(pool, 1280, rng.derive_stream(8, "cap"))
    init = init_model(preset("desk-mlp", ds.shape), rng.derive_stream(8, "init"))
    _, t = pol.prove(init, ds, TrainConfig(epochs=2, learning_rate=1e-3, batch_size=128, seed=8), 5)
    honest = pol.verify(t, ds, threshold=0.0)
    complete = honest.accepted and all(d == 0.0 for d in honest.distances)

    c = t.checkpoints[3]
    name = c.weights.names()[0]
    bumped = c.weights[name].copy()
    bumped.flat[0] += 1e-3
    cks = list(t.checkpoints)
    cks[3] = Checkpoint(c.step, c.weights.replace(**{name: bumped}), c.opt_state)
    bad = pol.verify(pol.PoLTranscript(t.dataset_commitment, t.arch, t.config, t.k, cks), ds, threshold=1e-6)
    perturb_rejected = not bad.accepted and bad.distances[2] > 1e-6 and bad.distances[3] > 0

    replays = []
    with monkeypatch.context() as m:
        m.setattr(pol, "_replay_distances", lambda *a: replays.append(1) or [])
        try:
            pol.verify(t, obfuscate(ds, ObfuscationSpec(0.1, seed=1)))
            commit_ok = False
        except CommitmentMismatch:
            commit_ok = not replays

    cfg = desk(mnist_root, kind="pol-spoof", reference="G", spoof="S", epochs=3, pol_k=10,
               sampling=[{"role": "G", "spec": "S-0.5-1-1", "anchor_labels": [0, 1, 2, 3, 4]},
                         {"role": "S", "spec": "S-0.5-1-1", "anchor_labels": [5, 6, 7, 8, 9]}],
               sigmas=[0.1, 0.5, 1.0])
    table = harness.run(cfg)
    floor_ = max(table.values(metric="honest_max_d"))
    min_spoof = min(table.values(sigma=0.1, metric="spoof_min_d"))
    med = [statistics.median(table.values(sigma=g, metric="spoof_median_d")) for g in cfg.sigmas]
    gap_ok = min_spoof > 10 * floor_ and min_spoof > 0
    trend = med[0] >= med[1] >= med[2]
    elapsed = time.perf_counter() - start
    ok = complete and perturb_rejected and commit_ok and gap_ok and trend and elapsed < 600
    report(8, ok, f"honest accept with all D == 0: {complete}; perturbed checkpoint rejected "
                  f"(segment D {bad.distances[2]:.2e}, {bad.distances[3]:.2e}): {perturb_rejected}; "
                  f"commitment mismatch before replay: {commit_ok}; honest floor {floor_!r}, "
                  f"min spoof D at sigma 0.1 = {min_spoof:.4f}; median spoof D at sigma 0.1/0.5/1.0 = "
                  f"{med[0]:.4f}/{med[1]:.4f}/{med[2]:.4f}", elapsed)


# ---------------------------------------------------------------- 9

def test_criterion_9_averaging_attack(report, mnist_root):
    start = time.perf_counter()
    cfg = desk(mnist_root, kind="averaging-attack", sampling=[{"role": "T", "spec": "S-1-1-0.2"}],
               sigmas=[1.0], seeds=[1], disclosures=[16, 64])
    table = harness.run(cfg)
    m16 = table.values(metric="recon_mse_n16")[0]
    m64 = table.values(metric="recon_mse_n64")[0]
    elapsed = time.perf_counter() - start
    ok = abs(m64 - 0.015625) <= 0.3 * 0.015625 and abs(m16 - 0.0625) <= 0.3 * 0.0625 and elapsed < 120
    report(9, ok, f"MSE N=64: {m64:.6f} (target 0.015625 +-30%), N=16: {m16:.6f} (target 0.0625 +-30%)",
           elapsed)


# ---------------------------------------------------------------- 10

def test_criterion_10_format_round_trips(report, tmp_path):
    results = {}
    d = mnist_dir()
    if d is not None:
        images = (d / MNIST_FILES[0]).read_bytes()
        labels = (d / MNIST_FILES[1]).read_bytes()
        ds = data.load_idx(d / MNIST_FILES[0], d / MNIST_FILES[1])
        data.save_idx(ds, tmp_path / "i", tmp_path / "l")
        results["mnist idx bytes"] = ((tmp_path / "i").read_bytes() == images
                                      and (tmp_path / "l").read_bytes() == labels)
    s = rng.derive_stream(10, "acceptance-roundtrip")
    noisy = data.Dataset(rng.gaussians(s, 1.0, 50 * 48).reshape(50, 48), np.arange(50) % 10, 10, (4, 4, 3))
    data.save_idx(noisy, tmp_path / "fi", tmp_path / "fl")
    back = data.load_idx(tmp_path / "fi", tmp_path / "fl")
    results["float idx"] = (back.features.tobytes() == noisy.features.tobytes()
                            and back.canonical_bytes() == noisy.canonical_bytes())

    w = init_model(preset("desk-cnn", (8, 8, 1)), rng.derive_stream(10, "init"))
    checkpoint.save(w, tmp_path / "w.ckpt")
    w2 = checkpoint.load(tmp_path / "w.ckpt")
    results["checkpoint"] = (fnorm(w, w2) == 0.0 and all(w[n].tobytes() == w2[n].tobytes() for n in w.names())
                             and checkpoint.dumps(w2) == (tmp_path / "w.ckpt").read_bytes())

    values = np.concatenate([rng.gaussians(s, 1e3, 500), s.uniform(500) * 1e-300,
                             [0.1 + 0.2, 1 / 3, np.pi, 5e-324, 1.7976931348623157e308, -0.0]])
    table = harness.ResultTable()
    for i, v in enumerate(values):
        table.add("x", i, "r", "S-1-1-1", 0.5, "m", v)
    harness.emit(table, tmp_path / "v.csv")
    parsed = [r[6] for r in harness.read_csv(tmp_path / "v.csv").rows]
    results["csv floats"] = np.array(parsed).tobytes() == values.astype(np.float64).tobytes()

    ok = all(results.values())
    skipped = "" if d is not None else " (MNIST absent: IDX checked on synthetic data only)"
    report(10, ok, "bit-exact round trips: " + ", ".join(f"{k}={v}" for k, v in results.items()) + skipped)
