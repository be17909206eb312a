"""Three-arm study bookkeeping: report structure, medians, plots."""

from __future__ import annotations

import json

import pytest

from tinyallm import backbone as bb
from tinyallm.ablation import ABLATION_ARMS, METRIC_COLUMNS, AblationConfig, emit_plots, run_ablation
from tinyallm.audio_world import CorpusConfig, build_corpus, load_default_ontology
from tinyallm.encoder import init_encoder
from tinyallm.pipeline import build_pretrain_corpus


@pytest.fixture(scope="module")
def tiny_study(tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("ablation")
    corpus = build_corpus(CorpusConfig(n_train=12, n_eval=8, ontology_size=6, seed=2))
    lines = build_pretrain_corpus(load_default_ontology(), n_lines=300, seed=0)
    vocab = bb.Vocab.build(lines)
    config = bb.BackboneConfig()
    arrays = bb.init_backbone_arrays(config, len(vocab), seed=0)
    backbone = bb.BackboneParams(arrays=arrays, config=config, vocab=vocab).freeze()
    cfg = AblationConfig(
        n_per_arm=4, seeds=(0, 1), steps=3, batch_size=2, max_new_tokens=4, out_dir=out_dir
    )
    report = run_ablation(corpus, backbone, init_encoder(seed=0), cfg)
    return report, out_dir


def test_constants():
    assert ABLATION_ARMS == ("pos_only", "pos_neg", "combined")
    assert "f1_no" in METRIC_COLUMNS and "yes_rate" in METRIC_COLUMNS


def test_config_to_json_roundtrips():
    cfg = AblationConfig(n_per_arm=7, seeds=(3, 4), steps=11)
    payload = cfg.to_json()
    assert payload["n_per_arm"] == 7
    assert payload["seeds"] == [3, 4]
    assert "out_dir" not in payload


def test_report_covers_every_arm_and_seed(tiny_study):
    report, _ = tiny_study
    pairs = {(r["arm"], r["seed"]) for r in report["rows"]}
    assert pairs == {(arm, seed) for arm in ABLATION_ARMS for seed in (0, 1)}
    assert not report["failures"]
    for row in report["rows"]:
        assert all(c in row for c in METRIC_COLUMNS)


def test_equal_effective_budget(tiny_study):
    report, _ = tiny_study
    assert set(report["effective_counts"].values()) == {8}


def test_medians_lie_between_seed_values(tiny_study):
    report, _ = tiny_study
    for arm in ABLATION_ARMS:
        values = sorted(r["yes_rate"] for r in report["rows"] if r["arm"] == arm)
        med = report["medians"][arm]["yes_rate"]
        assert values[0] <= med <= values[-1]


def test_artifacts_written(tiny_study):
    report, out_dir = tiny_study
    on_disk = json.loads((out_dir / "ablation_report.json").read_text())
    assert on_disk["medians"] == report["medians"]
    for arm in ABLATION_ARMS:
        assert (out_dir / f"dataset_{arm}.jsonl").exists()
    logs = json.loads((out_dir / "train_logs.json").read_text())
    assert set(logs) == {f"{arm}-seed{s}" for arm in ABLATION_ARMS for s in (0, 1)}
    assert all(len(records) == 3 for records in logs.values())


def test_emit_plots_writes_charts(tiny_study, tmp_path):
    report, out_dir = tiny_study
    logs = json.loads((out_dir / "train_logs.json").read_text())
    result = emit_plots(report, tmp_path, logs)
    assert set(result["written"]) == {"f1n_bar.png", "yesrate_bar.png", "loss_curves.png"}
    assert not result["notes"]


def test_emit_plots_degrades_to_notes(tmp_path):
    result = emit_plots({"medians": {}}, tmp_path)
    assert result["written"] == []
    assert len(result["notes"]) == 3
    assert not list(tmp_path.glob("*.png"))
