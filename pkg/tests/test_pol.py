import pytest

from dataset_obfuscation import data, pol, rng
from dataset_obfuscation.errors import CommitmentMismatch, SegmentOutOfRange, ShapeError
from dataset_obfuscation.nn import TrainConfig, init_model, preset
from dataset_obfuscation.nn.train import Checkpoint
from dataset_obfuscation.obfuscation import ObfuscationSpec, obfuscate


def setup(seed=0):
    # 320 rows at batch 8: 40 steps per epoch
    ds = data.synth_blobs(10, 32, 6, 0.1, rng.derive_stream(seed, "blobs"))
    init = init_model(preset("desk-mlp", ds.shape, 10), rng.derive_stream(seed, "init"))
    cfg = TrainConfig(epochs=2, learning_rate=1e-3, batch_size=8, seed=seed)
    return ds, init, cfg


@pytest.fixture(scope="module")
def honest():
    ds, init, cfg = setup()
    final, transcript = pol.prove(init, ds, cfg, 10)
    return ds, init, cfg, final, transcript


def test_checkpoint_schedule(honest):
    *_, final, t = honest
    assert t.steps() == list(range(0, 81, 10))
    assert t.num_segments == 8
    last = t.checkpoints[-1].weights
    assert all(last[n].tobytes() == final[n].tobytes() for n in final.names())


def test_zero_epochs_single_checkpoint():
    ds, init, cfg = setup()
    _, t = pol.prove(init, ds, TrainConfig(epochs=0), 10)
    assert t.steps() == [0] and t.checkpoints[0].weights is init


def test_prove_is_deterministic(honest):
    ds, init, cfg, _, t = honest
    _, again = pol.prove(init, ds, cfg, 10)
    assert pol.dumps(again) == pol.dumps(t)


def test_honest_replay_accepts_with_exact_zero(honest):
    ds, *_, t = honest
    verdict = pol.verify(t, ds, threshold=0.0)
    assert verdict.accepted
    assert verdict.distances == [0.0] * 8


def _perturbed(t, index, delta):
    c = t.checkpoints[index]
    name = c.weights.names()[0]
    bumped = c.weights[name].copy()
    bumped.flat[0] += delta
    cks = list(t.checkpoints)
    cks[index] = Checkpoint(c.step, c.weights.replace(**{name: bumped}), c.opt_state)
    return pol.PoLTranscript(t.dataset_commitment, t.arch, t.config, t.k, cks)


def test_single_perturbed_checkpoint_flags_both_segments(honest):
    ds, *_, t = honest
    bad = _perturbed(t, 3, 1e-3)
    verdict = pol.verify(bad, ds, threshold=1e-6)
    assert not verdict.accepted
    d = verdict.distances
    assert d[2] == pytest.approx(1e-3, rel=1e-6)
    assert d[3] > 0
    assert all(d[i] == 0.0 for i in range(8) if i not in (2, 3))


def test_commitment_mismatch_before_replay(honest, monkeypatch):
    ds, *_, t = honest
    other = obfuscate(ds, ObfuscationSpec(0.1, seed=1))

    def no_replay(*a, **k):
        raise AssertionError("replay ran before the commitment check")

    monkeypatch.setattr(pol, "_replay_distances", no_replay)
    with pytest.raises(CommitmentMismatch):
        pol.verify(t, other)


def test_segment_selection(honest):
    ds, *_, t = honest
    v = pol.verify(t, ds, segments=[1, 5])
    assert v.segments == [1, 5] and v.distances == [0.0, 0.0]
    with pytest.raises(SegmentOutOfRange):
        pol.verify(t, ds, segments=[8])


def test_transcript_file_round_trip(honest, tmp_path):
    ds, *_, t = honest
    path = tmp_path / "t.pol"
    pol.save(t, path)
    back = pol.load(path)
    assert pol.dumps(back) == path.read_bytes()
    assert back.steps() == t.steps() and back.dataset_commitment == t.dataset_commitment
    assert pol.verify(back, ds).distances == [0.0] * 8


def test_spoof_with_true_dataset_is_accepted(honest):
    ds, *_, t = honest
    d, verdict = pol.spoof_trial(t, ds, 0.0)
    assert verdict.accepted and d == [0.0] * 8


def test_spoof_with_other_dataset_is_visible(honest):
    ds, *_, t = honest
    other = data.synth_blobs(10, 32, 6, 0.1, rng.derive_stream(7, "blobs"))
    d, verdict = pol.spoof_trial(t, other, 1e-9)
    assert not verdict.accepted and min(d) > 0


def test_spoof_shape_check(honest):
    *_, t = honest
    with pytest.raises(ShapeError):
        pol.spoof_trial(t, data.synth_blobs(10, 2, 5, 0.1, rng.derive_stream(0, "b")), 0.0)
