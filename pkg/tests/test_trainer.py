"""Adapter training loop: loss op, frozen checks, determinism, checkpoints."""

from __future__ import annotations

import math

import numpy as np
import pytest

from tinyallm import backbone as bb
from tinyallm import encoder as enc
from tinyallm.adapter import init_adapter
from tinyallm.audio_world import CorpusConfig, build_corpus
from tinyallm.datagen import RuleGenerator, build_dataset
from tinyallm.errors import ConfigurationError
from tinyallm.rng import Stream
from tinyallm.trainer import (
    FrozenReport,
    TrainConfig,
    load_adapter_checkpoint,
    masked_nll,
    summarize_log,
    train_adapter,
    verify_frozen,
)


def small_world(seed=3, n_train=8, n_eval=8):
    corpus = build_corpus(CorpusConfig(n_train=n_train, n_eval=n_eval, ontology_size=6, seed=seed))
    pool = [c for c in corpus.clips if c.split == "train"]
    ds = build_dataset(pool, corpus.ontology, "combined", n_train, RuleGenerator(), Stream(1), name="t")
    texts = [s.final_prompt + " " + s.response for s in ds.samples]
    vocab = bb.Vocab.build(texts)
    cfg = bb.BackboneConfig()
    arrays = bb.init_backbone_arrays(cfg, len(vocab.tokens), seed=0)
    backbone = bb.BackboneParams(arrays=arrays, config=cfg, vocab=vocab).freeze()
    return corpus, ds, backbone, enc.init_encoder(seed=0)


# ---------------------------------------------------------------------------
# masked_nll oracles
# ---------------------------------------------------------------------------


def test_masked_nll_uniform_logits_is_log_vocab():
    V = 100
    logits = np.zeros((4, V))
    targets = np.array([7, 3, 99, 0])
    mask = np.ones(4, dtype=bool)
    loss, _ = masked_nll(logits, targets, mask)
    assert abs(loss - math.log(V)) < 1e-12


def test_masked_nll_huge_margin_vanishes():
    # +50 logit margin drives per-position NLL to about exp(-50) per rival
    V = 5
    logits = np.zeros((3, V))
    targets = np.array([2, 0, 4])
    logits[np.arange(3), targets] = 50.0
    loss, _ = masked_nll(logits, targets, np.ones(3, dtype=bool))
    assert loss < 1e-20


def test_masked_nll_mask_matches_filtered_recompute():
    rng = Stream(11)
    logits = rng.normal((6, 9))
    targets = np.array([rng.randint(9) for _ in range(6)])
    mask = np.array([1, 0, 1, 1, 0, 1], dtype=bool)
    loss, _ = masked_nll(logits, targets, mask)
    ref, _ = masked_nll(logits[mask], targets[mask], np.ones(int(mask.sum()), dtype=bool))
    assert abs(loss - ref) < 1e-12


def test_masked_nll_gradient_zero_off_mask():
    logits = Stream(4).normal((5, 7))
    targets = np.array([0, 1, 2, 3, 4])
    mask = np.array([1, 0, 1, 0, 1], dtype=bool)
    _, d = masked_nll(logits, targets, mask)
    assert np.all(d[~mask] == 0)
    assert np.any(d[mask] != 0)


def test_masked_nll_empty_mask_rejected():
    with pytest.raises(ValueError):
        masked_nll(np.zeros((2, 3)), np.array([0, 1]), np.zeros(2, dtype=bool))


# ---------------------------------------------------------------------------
# verify_frozen
# ---------------------------------------------------------------------------


def test_verify_frozen_identical_ok():
    r = verify_frozen({"a": "1", "b": "2"}, {"a": "1", "b": "2"})
    assert r == FrozenReport(ok=True)


def test_verify_frozen_mismatch_flagged():
    r = verify_frozen({"a": "1", "b": "2"}, {"a": "1", "b": "X"})
    assert not r.ok and r.mismatched == ["b"] and r.missing == []


def test_verify_frozen_missing_is_failure_not_exception():
    r = verify_frozen({"a": "1", "b": "2"}, {"a": "1"})
    assert not r.ok and r.missing == ["b"]
    extra = verify_frozen({"a": "1"}, {"a": "1", "z": "9"})
    assert not extra.ok and extra.missing == ["z"]


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------


def test_train_config_rejects_bad_values():
    with pytest.raises(ConfigurationError):
        TrainConfig(steps=-1)
    with pytest.raises(ConfigurationError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(optimizer="rmsprop")


# ---------------------------------------------------------------------------
# training loop behavior
# ---------------------------------------------------------------------------


def test_zero_steps_returns_init_unchanged():
    corpus, ds, backbone, ep = small_world()
    a0 = init_adapter(seed=5)
    before = {k: v.copy() for k, v in a0.arrays.items()}
    out, log = train_adapter(
        TrainConfig(steps=0, batch_size=2), ep, backbone, adapter_init=a0, dataset=ds, corpus=corpus
    )
    assert log == []
    assert all(np.array_equal(before[k], out.arrays[k]) for k in before)


def test_short_run_decreases_loss_and_freezes_rest(tmp_path):
    corpus, ds, backbone, ep = small_world()
    enc_digest = enc.freeze_checksum(enc.init_encoder(seed=0))
    bb_digest = bb.freeze_checksum(backbone)
    cfg = TrainConfig(steps=12, batch_size=4, out_dir=tmp_path, checkpoint_every=6)
    adapter, log = train_adapter(cfg, ep, backbone, dataset=ds, corpus=corpus)
    assert len(log) == 12
    assert log[-1].loss < log[0].loss
    # frozen stacks untouched bit for bit
    assert bb.freeze_checksum(backbone) == bb_digest
    assert enc.freeze_checksum(enc.init_encoder(seed=0)) == enc_digest
    # simplex holds at every logged step
    for rec in log:
        assert abs(sum(rec.mix_weights) - 1.0) < 1e-6
        assert all(w > 0 for w in rec.mix_weights)
    # periodic and final checkpoints on disk
    assert (tmp_path / "adapter-step00006.ckpt").exists()
    assert (tmp_path / "adapter-step00012.ckpt").exists()
    assert (tmp_path / "adapter.ckpt").exists()
    assert (tmp_path / "train_log.jsonl").exists()


def test_deterministic_runs_identical():
    corpus, ds, backbone, ep = small_world()
    cfg = TrainConfig(steps=6, batch_size=4, seed=9)
    a1, log1 = train_adapter(cfg, ep, backbone, dataset=ds, corpus=corpus)
    a2, log2 = train_adapter(cfg, ep, backbone, dataset=ds, corpus=corpus)
    assert all(np.array_equal(a1.arrays[k], a2.arrays[k]) for k in a1.arrays)
    assert [r.loss for r in log1] == [r.loss for r in log2]


def test_different_seed_diverges():
    corpus, ds, backbone, ep = small_world()
    a1, _ = train_adapter(TrainConfig(steps=4, batch_size=4, seed=1), ep, backbone, dataset=ds, corpus=corpus)
    a2, _ = train_adapter(TrainConfig(steps=4, batch_size=4, seed=2), ep, backbone, dataset=ds, corpus=corpus)
    assert any(not np.array_equal(a1.arrays[k], a2.arrays[k]) for k in a1.arrays)


def test_only_adapter_arrays_move():
    corpus, ds, backbone, ep = small_world()
    bb_before = {k: v.copy() for k, v in backbone.arrays.items()}
    enc_before = {k: v.copy() for k, v in ep.arrays().items()}
    a0 = init_adapter(seed=0)
    a0_before = {k: v.copy() for k, v in a0.arrays.items()}
    out, _ = train_adapter(
        TrainConfig(steps=5, batch_size=4), ep, backbone, adapter_init=a0, dataset=ds, corpus=corpus
    )
    assert all(np.array_equal(bb_before[k], backbone.arrays[k]) for k in bb_before)
    assert all(np.array_equal(enc_before[k], ep.arrays()[k]) for k in enc_before)
    moved = [k for k in a0_before if not np.array_equal(a0_before[k], out.arrays[k])]
    assert moved  # optimizer really did act on the adapter


def test_checkpoint_roundtrip_carries_attestations(tmp_path):
    corpus, ds, backbone, ep = small_world()
    cfg = TrainConfig(steps=3, batch_size=2, out_dir=tmp_path, checkpoint_every=0)
    adapter, _ = train_adapter(cfg, ep, backbone, dataset=ds, corpus=corpus)
    loaded, meta = load_adapter_checkpoint(tmp_path / "adapter.ckpt")
    assert all(np.array_equal(adapter.arrays[k], loaded.arrays[k]) for k in adapter.arrays)
    assert loaded.config == adapter.config
    assert meta["step"] == 3
    assert set(meta["frozen"]) == {"encoder", "backbone"}
    from tinyallm.checkpoint import digest_map

    assert meta["frozen"]["backbone"]["tok_emb"] == digest_map(backbone.arrays)["tok_emb"]


def test_missing_clip_reference_is_data_error():
    from tinyallm.errors import DataError

    corpus, ds, backbone, ep = small_world()
    ds.samples[0].clip_id = "clip-does-not-exist"
    with pytest.raises(DataError):
        train_adapter(TrainConfig(steps=1, batch_size=1), ep, backbone, dataset=ds, corpus=corpus)


def test_summarize_log_windowed_means():
    class R:
        def __init__(self, loss):
            self.loss = loss

    log = [R(float(x)) for x in [10, 10, 8, 6, 4, 4, 2, 2, 2, 1]]
    s = summarize_log(log, window_fraction=0.2)
    assert s["window"] == 2
    assert s["initial_window_mean"] == 10.0
    assert s["final_window_mean"] == 1.5
    assert abs(s["ratio"] - 0.15) < 1e-12
