"""Adapter training against the frozen encoder and backbone.

Gradients flow through the whole stack, but the optimizer only ever sees
adapter arrays; encoder and backbone digests are recorded before the
first step and asserted bitwise unchanged after the last.  In
deterministic mode the loop runs under a single BLAS thread so repeated
runs produce identical checkpoints.
"""

from __future__ import annotations

import contextlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import adapter as ad
from . import backbone as bb
from . import encoder as enc
from .audio_world import CorpusManifest
from .checkpoint import digest_map, save_arrays
from .datagen import DatasetManifest
from .errors import ConfigurationError, DataError, NumericalError
from .nn import clip_by_global_norm, make_optimizer
from .backbone import masked_nll  # the loss op lives with its batched engine

__all__ = [
    "TrainConfig",
    "TrainLogRecord",
    "FrozenReport",
    "masked_nll",
    "train_adapter",
    "verify_frozen",
    "summarize_log",
    "save_adapter_checkpoint",
    "load_adapter_checkpoint",
]


@dataclass
class TrainConfig:
    data: str | Path | None = None  # dataset manifest JSONL
    corpus: str | Path | None = None  # corpus manifest JSON
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    grad_clip: float = 1.0
    seed: int = 0
    checkpoint_every: int = 500
    deterministic: bool = True
    out_dir: str | Path | None = None

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigurationError("steps must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning rate must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")

    def to_json(self) -> dict:
        return {
            "data": str(self.data) if self.data else None,
            "corpus": str(self.corpus) if self.corpus else None,
            "steps": self.steps,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "grad_clip": self.grad_clip,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "deterministic": self.deterministic,
        }


@dataclass
class TrainLogRecord:
    step: int
    loss: float
    grad_norm: float
    mix_weights: list[float]
    wall_s: float

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "loss": self.loss,
            "grad_norm": self.grad_norm,
            "mix_weights": self.mix_weights,
            "wall_s": self.wall_s,
        }


@dataclass
class FrozenReport:
    ok: bool
    mismatched: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"ok": self.ok, "mismatched": self.mismatched, "missing": self.missing}


def verify_frozen(checksums_before: dict[str, str], checksums_after: dict[str, str]) -> FrozenReport:
    """Compare per-array digests; any difference or absence is a failure."""
    mismatched = sorted(
        n for n in checksums_before if n in checksums_after and checksums_before[n] != checksums_after[n]
    )
    missing = sorted(set(checksums_before) ^ set(checksums_after))
    return FrozenReport(ok=not mismatched and not missing, mismatched=mismatched, missing=missing)


def _deterministic_guard(enabled: bool):
    if not enabled:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


@dataclass
class _PreparedSample:
    clip_id: str
    prompt_ids: list[int]
    token_span: tuple[int, int]
    response_ids: list[int]
    stack: enc.LayerStack


def prepare_samples(
    dataset: DatasetManifest, corpus: CorpusManifest, encoder_params: enc.EncoderParams, vocab: bb.Vocab
) -> list[_PreparedSample]:
    """Tokenize every sample and encode each referenced clip exactly once."""
    stacks: dict[str, enc.LayerStack] = {}
    prepared = []
    for s in dataset.samples:
        if s.clip_id not in stacks:
            try:
                spec = corpus.clip(s.clip_id)
            except DataError:
                raise DataError(f"dataset references clip {s.clip_id!r} not in corpus manifest")
            stacks[s.clip_id] = enc.encode(corpus.realize(spec).waveform, encoder_params)
        prompt_ids, token_span = bb.tokenize_prompt_with_placeholder(
            vocab, s.final_prompt, s.placeholder_span
        )
        response_ids = vocab.encode(s.response) + [bb.EOS]
        prepared.append(
            _PreparedSample(
                clip_id=s.clip_id,
                prompt_ids=prompt_ids,
                token_span=token_span,
                response_ids=response_ids,
                stack=stacks[s.clip_id],
            )
        )
    return prepared


def _batch_step(
    batch: list[_PreparedSample],
    adapter_params: ad.AdapterParams,
    backbone_params: bb.BackboneParams,
) -> tuple[float, dict[str, np.ndarray]]:
    """Forward/backward for one batch; returns (loss, summed adapter grads)."""
    seqs = []
    caches = []
    for s in batch:
        prefix, cache = ad.adapter_forward_cached(s.stack, adapter_params)
        caches.append(cache)
        seqs.append(
            bb.embed_with_injection(
                backbone_params, s.prompt_ids, s.token_span, prefix.vectors, s.response_ids
            )
        )
    d = backbone_params.config.d_llm
    s_max = max(q.embeddings.shape[0] for q in seqs)
    pad_row = backbone_params.arrays["tok_emb"][bb.PAD]
    emb = np.tile(pad_row, (len(seqs), s_max, 1))
    targets = np.full((len(seqs), s_max), -1, dtype=np.int64)
    mask = np.zeros((len(seqs), s_max), dtype=bool)
    for row, q in enumerate(seqs):
        n = q.embeddings.shape[0]
        emb[row, :n] = q.embeddings
        targets[row, :n] = q.target_ids
        mask[row, :n] = q.loss_mask
    logits, fcache = bb.forward_batch(backbone_params.arrays, backbone_params.config, emb)
    loss, dlogits = bb.batched_nll(logits, targets, mask)
    demb, _ = bb.backward_batch(backbone_params.arrays, backbone_params.config, fcache, dlogits)

    total: dict[str, np.ndarray] = {}
    for row, (q, cache) in enumerate(zip(seqs, caches)):
        lo, hi = q.audio_span
        d_prefix = demb[row, lo:hi]
        for name, g in ad.adapter_backward(adapter_params, cache, d_prefix).items():
            if name in total:
                total[name] += g
            else:
                total[name] = g
    return loss, total


def train_adapter(
    config: TrainConfig,
    encoder_params: enc.EncoderParams,
    backbone_params: bb.BackboneParams,
    adapter_init: ad.AdapterParams | None = None,
    dataset: DatasetManifest | None = None,
    corpus: CorpusManifest | None = None,
) -> tuple[ad.AdapterParams, list[TrainLogRecord]]:
    """Optimize the adapter; everything else is digest-checked frozen."""
    if dataset is None:
        if config.data is None:
            raise ConfigurationError("no dataset given (config.data or dataset argument)")
        dataset = DatasetManifest.load_jsonl(config.data)
    if corpus is None:
        if config.corpus is None:
            raise ConfigurationError("no corpus given (config.corpus or corpus argument)")
        corpus = CorpusManifest.load(config.corpus)
    if not dataset.samples:
        raise ConfigurationError("dataset has no samples")

    adapter_params = adapter_init or ad.init_adapter(
        ad.AdapterConfig(d_llm=backbone_params.config.d_llm), seed=config.seed
    )

    enc_before = digest_map(encoder_params.arrays())
    bb_before = digest_map(backbone_params.arrays)

    prepared = prepare_samples(dataset, corpus, encoder_params, backbone_params.vocab)
    optimizer = make_optimizer(config.optimizer, config.learning_rate)
    from .rng import Stream

    rng = Stream(config.seed).derive("train", dataset.name)
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    log: list[TrainLogRecord] = []
    t0 = time.perf_counter()
    with _deterministic_guard(config.deterministic):
        for step in range(config.steps):
            batch_rng = rng.derive("batch", step)
            idx = [batch_rng.randint(len(prepared)) for _ in range(config.batch_size)]
            batch = [prepared[i] for i in idx]
            loss, grads = _batch_step(batch, adapter_params, backbone_params)
            if not np.isfinite(loss):
                diagnostics = {
                    "step": step,
                    "loss": float(loss),
                    "sample_indices": idx,
                    "clip_ids": [b.clip_id for b in batch],
                }
                if out_dir:
                    (out_dir / "nan_diagnostics.json").write_text(json.dumps(diagnostics, indent=1))
                err = NumericalError(f"training loss non-finite at step {step}")
                err.diagnostics = diagnostics
                raise err
            grad_norm = clip_by_global_norm(grads, config.grad_clip)
            optimizer.step(adapter_params.arrays, grads)
            log.append(
                TrainLogRecord(
                    step=step,
                    loss=float(loss),
                    grad_norm=float(grad_norm),
                    mix_weights=[float(w) for w in ad.mix_weights(adapter_params.layer_logits)],
                    wall_s=time.perf_counter() - t0,
                )
            )
            if out_dir and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                save_adapter_checkpoint(
                    out_dir / f"adapter-step{step + 1:05d}.ckpt",
                    adapter_params,
                    config,
                    enc_before,
                    bb_before,
                    step=step + 1,
                )

    report = verify_frozen(
        {**_prefixed(enc_before, "encoder."), **_prefixed(bb_before, "backbone.")},
        {
            **_prefixed(digest_map(encoder_params.arrays()), "encoder."),
            **_prefixed(digest_map(backbone_params.arrays), "backbone."),
        },
    )
    if not report.ok:
        raise RuntimeError(f"frozen-parameter check failed: {report.to_json()}")

    if out_dir:
        save_adapter_checkpoint(
            out_dir / "adapter.ckpt", adapter_params, config, enc_before, bb_before, step=config.steps
        )
        with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as fh:
            for rec in log:
                fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
    return adapter_params, log


def _prefixed(digests: dict[str, str], prefix: str) -> dict[str, str]:
    return {prefix + k: v for k, v in digests.items()}


def summarize_log(log: list[TrainLogRecord], window_fraction: float = 0.1) -> dict:
    """Windowed-mean NLL over the first and last fraction of steps."""
    if not log:
        raise ValueError("empty training log")
    n = max(1, int(len(log) * window_fraction))
    first = float(np.mean([r.loss for r in log[:n]]))
    last = float(np.mean([r.loss for r in log[-n:]]))
    return {
        "window": n,
        "initial_window_mean": first,
        "final_window_mean": last,
        "ratio": last / first if first > 0 else float("inf"),
    }


def save_adapter_checkpoint(
    path: str | Path,
    adapter_params: ad.AdapterParams,
    config: TrainConfig,
    encoder_digests: dict[str, str],
    backbone_digests: dict[str, str],
    step: int,
) -> None:
    """Adapter arrays plus config echo and frozen-checksum attestations."""
    meta = {
        "adapter_version": adapter_params.version,
        "adapter_config": adapter_params.config.to_json(),
        "train_config": config.to_json(),
        "step": step,
        "frozen": {
            "encoder": encoder_digests,
            "backbone": backbone_digests,
        },
    }
    save_arrays(path, adapter_params.arrays, meta=meta, dtype="<f8")


def load_adapter_checkpoint(path: str | Path) -> tuple[ad.AdapterParams, dict]:
    from .checkpoint import load_arrays

    arrays, meta = load_arrays(path)
    params = ad.AdapterParams(
        arrays=arrays,
        config=ad.AdapterConfig.from_json(meta["adapter_config"]),
        version=meta.get("adapter_version", ad.ADAPTER_VERSION),
    )
    return params, meta
