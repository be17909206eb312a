"""Desk-scale audio-aware language model lab.

Everything runs on numpy at sizes where a full experiment fits in minutes:
synthesize labeled audio clips, derive contrastive present/absent training
pairs, pretrain a small template language model, train a Q-former adapter
against the frozen backbone, and score hallucination / audio question
answering behavior.
"""

from __future__ import annotations

from .ablation import AblationConfig, emit_plots, run_ablation
from .adapter import AdapterConfig, AdapterParams, adapter_forward, init_adapter
from .audio_world import (
    AudioClip,
    ClipSpec,
    CorpusConfig,
    CorpusManifest,
    Ontology,
    build_corpus,
    gen_clip,
    load_default_ontology,
)
from .backbone import (
    BackboneClient,
    BackboneConfig,
    BackboneParams,
    PretrainConfig,
    load_backbone,
    pretrain_toy_lm,
    save_backbone,
)
from .datagen import (
    GenerationPrompt,
    RuleGenerator,
    SeedPrompt,
    TrainingSample,
    build_ablation_splits,
    build_dataset,
    build_final_prompt,
)
from .encoder import EncoderParams, LayerStack, encode, init_encoder
from .errors import ConfigurationError, DataError, GenerationError, NumericalError
from .evalharness import MetricsReport, run_eval, run_full_eval
from .pipeline import AllmEndpoint, build_pretrain_corpus, load_endpoint
from .rng import Stream
from .trainer import TrainConfig, load_adapter_checkpoint, train_adapter

__version__ = "0.1.0"

__all__ = [
    "AblationConfig",
    "AdapterConfig",
    "AdapterParams",
    "AllmEndpoint",
    "AudioClip",
    "BackboneClient",
    "BackboneConfig",
    "BackboneParams",
    "ClipSpec",
    "ConfigurationError",
    "CorpusConfig",
    "CorpusManifest",
    "DataError",
    "EncoderParams",
    "LayerStack",
    "GenerationError",
    "GenerationPrompt",
    "MetricsReport",
    "NumericalError",
    "Ontology",
    "PretrainConfig",
    "RuleGenerator",
    "SeedPrompt",
    "Stream",
    "TrainConfig",
    "TrainingSample",
    "adapter_forward",
    "build_ablation_splits",
    "build_corpus",
    "build_dataset",
    "build_final_prompt",
    "build_pretrain_corpus",
    "emit_plots",
    "encode",
    "gen_clip",
    "init_adapter",
    "init_encoder",
    "load_adapter_checkpoint",
    "load_backbone",
    "load_default_ontology",
    "load_endpoint",
    "pretrain_toy_lm",
    "run_ablation",
    "run_eval",
    "run_full_eval",
    "save_backbone",
    "train_adapter",
    "__version__",
]
