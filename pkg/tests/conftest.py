"""Session-scoped fixtures: reference corpus, shipped backbone, reference run.

The backbone artifact under artifacts/backbone-v1 is a committed build
product of `tinyallm pretrain-lm` (the frozen language model is an input
to adapter training, not something each test session re-learns).
"""

from __future__ import annotations

from pathlib import Path
from types import SimpleNamespace

import pytest

from tinyallm.audio_world import CorpusConfig, build_corpus
from tinyallm.backbone import load_backbone
from tinyallm.datagen import RuleGenerator, build_dataset
from tinyallm.encoder import init_encoder
from tinyallm.rng import Stream
from tinyallm.trainer import TrainConfig, train_adapter

ARTIFACT_DIR = Path(__file__).resolve().parent.parent / "artifacts" / "backbone-v1"

REFERENCE_CORPUS = CorpusConfig(n_train=200, n_eval=50, ontology_size=8, seed=0)


@pytest.fixture(scope="session")
def reference_corpus():
    return build_corpus(REFERENCE_CORPUS)


@pytest.fixture(scope="session")
def frozen_backbone():
    if not ARTIFACT_DIR.exists():
        pytest.fail(
            "missing committed backbone artifact; rebuild with "
            "`tinyallm pretrain-lm --out-dir artifacts/backbone-v1`"
        )
    return load_backbone(ARTIFACT_DIR)


@pytest.fixture(scope="session")
def frozen_encoder():
    return init_encoder(seed=0)


@pytest.fixture(scope="session")
def reference_dataset(reference_corpus):
    return build_dataset(
        reference_corpus.train_clips,
        reference_corpus.ontology,
        "combined",
        200,
        RuleGenerator(),
        Stream(0).derive("reference-data"),
        name="reference-combined",
    )


@pytest.fixture(scope="session")
def reference_run(reference_corpus, reference_dataset, frozen_backbone, frozen_encoder,
                  tmp_path_factory):
    """One full 2000-step deterministic train run shared by the acceptance suite."""
    out_dir = tmp_path_factory.mktemp("reference-run")
    config = TrainConfig(steps=2000, seed=0, out_dir=out_dir, checkpoint_every=1000)
    adapter, log = train_adapter(
        config, frozen_encoder, frozen_backbone,
        dataset=reference_dataset, corpus=reference_corpus,
    )
    return SimpleNamespace(adapter=adapter, log=log, config=config, out_dir=out_dir)
