import json
import math

import numpy as np
import pytest

from uasep.embednet import EmbeddingNet, TrainConfig, load_checkpoint
from uasep.errors import ParameterError, TrainingDivergedError
from uasep.masking import LabelMatrix
from uasep.training import (DatasetSpec, build_epoch, chunk_mixture, chunk_starts, embed_frames,
                            init_network, load_dataset_spec, synthetic_pool, train)


def _small_spec(seed=0, max_mix=2, n_per_family=2):
    return DatasetSpec(synthetic_pool(n_per_family, duration=0.5), max_mix=max_mix,
                       mixtures_per_epoch=2, clip_seconds=0.5, seed=seed)


def _overfit_cfg(**kw):
    base = dict(learning_rate=1e-3, momentum=0.0, epochs=50, dropout_input=0.0,
                dropout_hidden=0.0, l2=0.0, batch_size=1)
    base.update(kw)
    return TrainConfig(**base)


def test_two_item_pool_gives_two_columns():
    pool = synthetic_pool(1, duration=0.5, families=("ship", "bio"))
    spec = DatasetSpec(pool, max_mix=2, mixtures_per_epoch=3, clip_seconds=0.5)
    chunks = build_epoch(spec, 0)
    assert chunks
    for c in chunks:
        assert c.labels.n_sources == 2
        assert c.labels.onehot.shape[0] == c.frames.shape[0] * c.frames.shape[1]


def test_pool_smaller_than_max_mix_rejected():
    with pytest.raises(ParameterError):
        DatasetSpec(synthetic_pool(2, families=("ship", "bio")), max_mix=3)
    with pytest.raises(ParameterError):
        DatasetSpec(synthetic_pool(2), min_mix=1)


def test_chunk_exact_length_gives_one_chunk():
    F = 5
    frames = np.zeros((100, F))
    lab = LabelMatrix(np.zeros((100 * F, 2)), np.zeros(100 * F))
    assert len(chunk_mixture(frames, lab, 100, 0.5)) == 1


@pytest.mark.parametrize("T,c", [(100, 100), (250, 100), (301, 100), (1000, 100), (57, 10), (64, 8)])
def test_chunk_count_matches_enumeration(T, c):
    starts = chunk_starts(T, c, 0.5)
    enumerated = [s for s in range(0, T) if s % (c // 2) == 0 and s + c <= T]
    assert starts == enumerated
    assert len(starts) == (T - c) // (c // 2) + 1


def test_chunks_share_source_order_within_mixture():
    spec = _small_spec(max_mix=3)
    chunks = build_epoch(spec, 1)
    by_mix = {}
    for c in chunks:
        by_mix.setdefault(c.mixture, set()).add(c.labels.n_sources)
    assert all(len(v) == 1 for v in by_mix.values())


def test_build_epoch_deterministic():
    spec = _small_spec()
    a, b = build_epoch(spec, 3), build_epoch(spec, 3)
    assert len(a) == len(b)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.frames, y.frames)
        np.testing.assert_array_equal(x.labels.onehot, y.labels.onehot)
    c = build_epoch(spec, 4)
    assert not np.array_equal(a[0].frames, c[0].frames)


def test_zero_epochs_checkpoint_equals_init(tmp_path):
    spec = _small_spec()
    cfg = TrainConfig(epochs=0)
    res = train(spec, cfg, "rnn", outdir=tmp_path, hidden=8, embed_dim=3, layers=1)
    net0 = init_network(spec, cfg, "rnn", hidden=8, embed_dim=3, layers=1)
    loaded = load_checkpoint(res.checkpoint)
    assert res.history == []
    for name, p in net0.params.items():
        np.testing.assert_array_equal(loaded.params[name], p)
    np.testing.assert_array_equal(loaded.input_mean, net0.input_mean)


def test_overfit_single_chunk_pinned_seed():
    # plain SGD on one memorizable chunk; the outcome is seed-sensitive, so
    # the example is pinned to dataset seed 0 and init seed 0
    spec = _small_spec(seed=0)
    chunk = build_epoch(spec, 0)[:1]
    res = train(spec, _overfit_cfg(), "rnn", fixed_chunks=chunk, hidden=128, embed_dim=10,
                layers=1)
    losses = res.epoch_means()
    assert len(losses) == 50
    assert losses[-1] < 0.10 * losses[0]


@pytest.mark.parametrize("seed", [1, 2])
def test_overfit_descends_for_other_seeds(seed):
    spec = _small_spec(seed=seed)
    chunk = build_epoch(spec, 0)[:1]
    res = train(spec, _overfit_cfg(seed=seed, epochs=20), "rnn", fixed_chunks=chunk,
                hidden=64, embed_dim=10, layers=1)
    losses = res.epoch_means()
    assert losses[-1] < losses[0]


def test_same_seed_identical_history(tmp_path):
    spec = _small_spec()
    cfg = TrainConfig(epochs=2, learning_rate=1e-4, batch_size=2)
    a = train(spec, cfg, "lstm", outdir=tmp_path / "a", hidden=6, embed_dim=3, layers=1)
    b = train(spec, cfg, "lstm", outdir=tmp_path / "b", hidden=6, embed_dim=3, layers=1)
    assert a.history == b.history
    assert all(math.isfinite(h[2]) for h in a.history)
    assert (tmp_path / "a" / "loss_history.csv").read_bytes() == \
        (tmp_path / "b" / "loss_history.csv").read_bytes()
    assert (tmp_path / "a" / "epoch_001.uanet").exists()
    assert (tmp_path / "a" / "epoch_002.uanet").exists()
    header = (tmp_path / "a" / "loss_history.csv").read_text().splitlines()[0]
    assert header == "epoch,chunk,loss"


def test_divergence_names_epoch():
    spec = _small_spec()
    net = init_network(spec, TrainConfig(), "rnn", hidden=4, embed_dim=2, layers=1)
    for p in net.params.values():
        p[...] = np.nan
    with pytest.raises(TrainingDivergedError, match="epoch 1"):
        train(spec, TrainConfig(epochs=1), "rnn", net=net)


def test_load_dataset_spec(tmp_path):
    path = tmp_path / "ds.json"
    path.write_text(json.dumps({
        "synthetic": {"n_per_family": 2, "duration": 0.5},
        "max_mix": 2, "mixtures_per_epoch": 5, "seed": 7,
        "stft": {"frame_ms": 32, "hop_ms": 8, "window_kind": "hann"},
    }))
    spec = load_dataset_spec(path)
    assert spec.mixtures_per_epoch == 5 and spec.seed == 7 and spec.max_mix == 2
    assert len(spec.source_pool) == 6


def test_embed_frames_long_sequence_unit_rows():
    net = EmbeddingNet("rnn", 7, 5, 3, 1, seed=0)
    frames = np.random.default_rng(0).standard_normal((230, 7))
    V = embed_frames(net, frames, chunk_frames=100)
    assert V.shape == (230 * 7, 3)
    norms = np.linalg.norm(V, axis=1)
    assert np.all((np.abs(norms - 1) < 1e-9) | (norms == 0))
    # short input goes through in one pass
    np.testing.assert_array_equal(embed_frames(net, frames[:50]), net.embed(frames[:50]))
