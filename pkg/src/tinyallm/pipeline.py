"""End-to-end wiring: pretraining corpus, the audio-question endpoint,
and artifact round-trips shared by the command-line stages.

The backbone never sees audio during pretraining; it learns the closed
template language.  Each line pairs a bracketed seed description with
either a generation instruction or a probe question, so that after the
adapter replaces the seed span with audio-derived rows, every downstream
prompt stays in-distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adapter as ad
from . import backbone as bb
from . import encoder as enc
from .audio_world import Ontology, caption_for
from .datagen import (
    GENERATION_PROMPT_TEXTS,
    GenerationPrompt,
    SeedPrompt,
    build_final_prompt,
    render_rule_response,
    sample_absent_events,
)
from .evalharness import COUNT_TEMPLATE, HALLUC_TEMPLATE, NUMBER_WORDS, SYNHYP_TEMPLATE, synhyp_phrases_for
from .rng import Stream

__all__ = [
    "PRETRAIN_CORPUS_VERSION",
    "DUMMY_SEED",
    "build_pretrain_corpus",
    "AllmEndpoint",
    "load_endpoint",
    "save_run_record",
]

PRETRAIN_CORPUS_VERSION = "pretrain-corpus-v1"

# Stand-in seed at inference: only its token count matters, because the
# placeholder run is excised and replaced by the K adapter rows.
DUMMY_SEED = "audio"


def _sample_tags(ontology: Ontology, rng: Stream) -> tuple[str, ...]:
    n = 1 + rng.randint(3)
    return ontology.sort_tags(rng.sample(list(ontology.ids), n))


def _seed_for(tags: tuple[str, ...], ontology: Ontology, rng: Stream) -> SeedPrompt:
    if rng.randint(2) == 0:
        return SeedPrompt(kind="caption", text=caption_for(tags, ontology, rng))
    return SeedPrompt(kind="tag", text=", ".join(ontology.display(t) for t in tags))


def _generation_line(ontology: Ontology, rng: Stream, kind: str) -> str:
    tags = _sample_tags(ontology, rng)
    seed = _seed_for(tags, ontology, rng)
    final, _ = build_final_prompt(seed, GenerationPrompt.of_kind(kind))
    present = [ontology.display(t) for t in tags]
    k = min(3, len(ontology) - len(tags))
    absent = [ontology.display(t) for t in sample_absent_events(tags, ontology, k, rng)]
    response = render_rule_response(kind, present, absent)
    return f"{final}\t{response}"


def _question_line(ontology: Ontology, rng: Stream, family: str, want_yes: bool) -> str:
    tags = _sample_tags(ontology, rng)
    seed = _seed_for(tags, ontology, rng)
    if family == "count":
        question, answer = COUNT_TEMPLATE, NUMBER_WORDS[len(tags)]
    elif family == "halluc":
        if want_yes:
            concept = rng.choice(list(tags))
        else:
            concept = rng.choice([c for c in ontology.ids if c not in tags])
        name = ontology.display(concept)
        question = HALLUC_TEMPLATE.format(name=name)
        # echo-then-verdict: restating the queried name before yes/no is
        # what lets a two-layer model learn the membership rule at all --
        # the echo supervises locating the query, and the verdict is then
        # emitted adjacent to it.  The answer extractor reads either form.
        answer = f"{name}: " + ("yes" if want_yes else "no")
    elif family == "synhyp":
        true_phrases = sorted({p for t in tags for p in synhyp_phrases_for(ontology, t)})
        if want_yes:
            phrase = rng.choice(true_phrases)
        else:
            pool = sorted(
                {p for c in ontology.ids if c not in tags for p in synhyp_phrases_for(ontology, c)}
                - set(true_phrases)
            )
            phrase = rng.choice(pool)
        question = SYNHYP_TEMPLATE.format(phrase=phrase)
        answer = f"{phrase}: " + ("yes" if want_yes else "no")
    else:
        raise ValueError(f"unknown question family {family!r}")
    final, _ = build_final_prompt(seed, GenerationPrompt(kind="question", text=question))
    return f"{final}\t{answer}"


def build_pretrain_corpus(ontology: Ontology, n_lines: int = 12000, seed: int = 0) -> list[str]:
    """Deterministic template corpus covering every downstream prompt shape.

    Mix per 20 lines: 6 generation pairs (2 per instruction kind), 12 probe
    question pairs (yes/no balanced within each family, plus counts), and 2
    plain caption lines for general language signal.  The question-heavy
    mix is deliberate: membership verdicts carry one token of loss each,
    so they need count, not length, to compete with generation lines.
    """
    gen_kinds = sorted(GENERATION_PROMPT_TEXTS)
    lines = []
    for i in range(n_lines):
        rng = Stream(seed).derive("pretrain-corpus", PRETRAIN_CORPUS_VERSION, i)
        slot = i % 20
        if slot < 6:
            lines.append(_generation_line(ontology, rng, gen_kinds[slot % 3]))
        elif slot < 18:
            family = ["halluc", "synhyp", "count"][slot % 3]
            # parity flips per 20-line block so each family sees exactly
            # half yes half no; slot%2 alone would skew within a family
            want_yes = (slot + i // 20) % 2 == 0
            lines.append(_question_line(ontology, rng, family, want_yes=want_yes))
        else:
            tags = _sample_tags(ontology, rng)
            lines.append(caption_for(tags, ontology, rng))
    return lines


# ---------------------------------------------------------------------------
# The audio-question endpoint
# ---------------------------------------------------------------------------


@dataclass
class AllmEndpoint:
    """Answers (waveform, question) through encoder -> adapter -> frozen LM."""

    encoder_params: enc.EncoderParams
    adapter_params: ad.AdapterParams
    backbone_params: bb.BackboneParams

    def answer(self, waveform: np.ndarray, question: str, max_new_tokens: int = 24) -> str:
        stack = enc.encode(waveform, self.encoder_params)
        prefix = ad.adapter_forward(stack, self.adapter_params)
        seed = SeedPrompt(kind="tag", text=DUMMY_SEED)
        final, span = build_final_prompt(seed, GenerationPrompt(kind="question", text=question))
        ids, token_span = bb.tokenize_prompt_with_placeholder(self.backbone_params.vocab, final, span)
        injected = bb.embed_with_injection(self.backbone_params, ids, token_span, prefix.vectors, [])
        return bb.greedy_decode(self.backbone_params, injected.embeddings, max_new_tokens)


def load_endpoint(backbone_dir: str | Path, adapter_ckpt: str | Path, encoder_seed: int = 0) -> AllmEndpoint:
    """Assemble an endpoint from saved artifacts plus the derived encoder."""
    from .trainer import load_adapter_checkpoint

    backbone = bb.load_backbone(backbone_dir)
    adapter_params, _ = load_adapter_checkpoint(adapter_ckpt)
    return AllmEndpoint(
        encoder_params=enc.init_encoder(seed=encoder_seed),
        adapter_params=adapter_params,
        backbone_params=backbone,
    )


def save_run_record(out_dir: str | Path, record: dict) -> Path:
    """Reproducibility record: the resolved config and artifact digests."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "run_record.json"
    path.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n", "utf-8")
    return path
