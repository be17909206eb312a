"""Training-data synthesis: prompt assembly, responses, ablation splits.

A sample is built in three steps: the clip's annotation becomes a seed
prompt (caption preferred, tag list otherwise); the seed is wrapped in
audio delimiters and joined with a generation prompt (positive, negative,
or combined); a pluggable generator produces the response used as the
next-token target.  The byte span of the seed inside the final prompt is
tracked because that region is replaced by audio representations during
adapter training.

Generators: a rule-based oracle whose responses are verifiably sound
against clip metadata, a binding for the package's own LM under greedy
decoding, and an HTTP client for external text-generation services.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .audio_world import ClipSpec, Ontology
from .errors import (
    ConfigurationError,
    DataError,
    EmptyResponseError,
    GenerationError,
    InsufficientNegativesError,
)
from .rng import Stream

BEGIN_DELIM = "[Begin of audio]"
END_DELIM = "[End of audio]"

PROMPT_VERSION = "gen-prompts-v1"
GENERATION_PROMPT_TEXTS = {
    "positive": "Replay the audio.",
    "negative": "Identify sounds that are absent as contrasting examples.",
    "combined": "Replay the audio and identify sounds that are absent as contrasting examples.",
}

NEGATIVE_HEADER = (
    "Based on the provided audio, here are some specific sound events "
    "that are not present in the audio:"
)
PRESENT_HEADER = "Specific sound events detected in the provided audio:"
ABSENT_HEADER = (
    "Contrastive examples of specific sound events not present in the provided audio:"
)

DEFAULT_NEGATIVES_PER_SAMPLE = 3
DATASET_VERSION = "dataset-v1"
TOKEN_ENV_VAR = "TINYALLM_API_TOKEN"


@dataclass(frozen=True)
class SeedPrompt:
    """Textual stand-in for the audio: a caption or a tag list."""

    kind: str  # caption | tag
    text: str

    def __post_init__(self):
        if self.kind not in ("caption", "tag"):
            raise ValueError(f"seed kind must be caption|tag, got {self.kind!r}")
        if not self.text:
            raise ValueError("seed text must be non-empty")


@dataclass(frozen=True)
class GenerationPrompt:
    """Instruction appended after the audio span; text is versioned."""

    kind: str  # positive | negative | combined
    text: str

    @classmethod
    def of_kind(cls, kind: str) -> "GenerationPrompt":
        if kind not in GENERATION_PROMPT_TEXTS:
            raise ValueError(f"generation kind must be one of {sorted(GENERATION_PROMPT_TEXTS)}")
        return cls(kind=kind, text=GENERATION_PROMPT_TEXTS[kind])


def build_final_prompt(seed: SeedPrompt, gen: GenerationPrompt) -> tuple[str, tuple[int, int]]:
    """Compose the final prompt and the byte span of the seed inside it."""
    if not seed.text or not gen.text:
        raise ValueError("seed and generation texts must be non-empty")
    start = len(BEGIN_DELIM) + 1
    final = f"{BEGIN_DELIM} {seed.text} {END_DELIM} {gen.text}"
    return final, (start, start + len(seed.text))


def parse_final_prompt(final_prompt: str) -> tuple[str, str]:
    """Invert build_final_prompt into (seed text, gen text).

    The end delimiter is matched from the right, so a seed that itself
    contains the delimiter still round-trips (generation prompts never do).
    """
    prefix = BEGIN_DELIM + " "
    sep = f" {END_DELIM} "
    if not final_prompt.startswith(prefix):
        raise DataError("final prompt does not start with the audio begin delimiter")
    body = final_prompt[len(prefix) :]
    idx = body.rfind(sep)
    if idx < 0:
        raise DataError("final prompt lacks the audio end delimiter")
    return body[:idx], body[idx + len(sep) :]


def seed_prompt_for_clip(spec: ClipSpec, ontology: Ontology) -> SeedPrompt:
    """Caption if present, else comma-joined display names of the tags."""
    if spec.caption:
        return SeedPrompt(kind="caption", text=spec.caption)
    return SeedPrompt(kind="tag", text=", ".join(ontology.display(t) for t in spec.tags))


def sample_absent_events(present, ontology: Ontology, k: int, rng: Stream) -> list[str]:
    """k distinct classes uniformly from the complement of the present set."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    complement = [cid for cid in ontology.ids if cid not in set(present)]
    if len(complement) < k:
        raise InsufficientNegativesError(
            f"need {k} absent classes but only {len(complement)} exist outside {sorted(present)}"
        )
    return ontology.sort_tags(rng.sample(complement, k))


def _capitalize(phrase: str) -> str:
    return phrase[0].upper() + phrase[1:] if phrase else phrase


def _numbered(names) -> str:
    return " ".join(f"{i}. {_capitalize(n)}" for i, n in enumerate(names, start=1))


def render_rule_response(kind: str, present_names=(), absent_names=()) -> str:
    """Deterministic oracle response in the documented shapes.

    positive: "Water pouring sounds, woman talking in the background";
    negative: header plus a numbered absent list; combined: a numbered
    present section followed by a numbered absent section.
    """
    if kind == "positive":
        if not present_names:
            raise ValueError("positive response needs present names")
        text = f"{present_names[0]} sounds"
        if len(present_names) > 1:
            text += ", " + ", ".join(present_names[1:]) + " in the background"
        return _capitalize(text)
    if kind == "negative":
        if not absent_names:
            raise ValueError("negative response needs absent names")
        return f"{NEGATIVE_HEADER}\n{_numbered(absent_names)}"
    if kind == "combined":
        if not present_names or not absent_names:
            raise ValueError("combined response needs both present and absent names")
        return (
            f"{PRESENT_HEADER}\n{_numbered(present_names)}\n\n"
            f"{ABSENT_HEADER}\n{_numbered(absent_names)}"
        )
    raise ValueError(f"unknown response kind {kind!r}")


# ---------------------------------------------------------------------------
# Response generators
# ---------------------------------------------------------------------------


class RuleGenerator:
    """Verifiable oracle: renders responses straight from clip metadata."""

    generator_id = "rule"

    def respond(self, kind, present_names, absent_names, final_prompt):
        return render_rule_response(kind, present_names, absent_names)


class LmGenerator:
    """Wraps any text-generation client; the prompt is the whole interface."""

    def __init__(self, client, max_new_tokens: int = 64) -> None:
        self.client = client
        self.max_new_tokens = max_new_tokens
        self.generator_id = getattr(client, "client_id", "lm")

    def respond(self, kind, present_names, absent_names, final_prompt):
        return synthesize_with_lm(self.client, final_prompt, self.max_new_tokens)


def synthesize_with_lm(client, final_prompt: str, max_new_tokens: int = 64) -> str:
    """One greedy completion from a client; failures carry the prompt."""
    try:
        text = client.generate(prompt=final_prompt, max_new_tokens=max_new_tokens, decoding="greedy")
    except GenerationError:
        raise
    except Exception as exc:
        raise GenerationError(f"generation client failed: {exc}", prompt=final_prompt) from exc
    text = text.strip()
    if not text:
        raise EmptyResponseError("client returned an empty completion", prompt=final_prompt)
    return text


class MockClient:
    """Echoes a canned completion; for tests and dry runs."""

    client_id = "mock"

    def __init__(self, text: str = "Mock sounds described here") -> None:
        self.text = text
        self.calls: list[str] = []

    def generate(self, prompt: str, max_new_tokens: int, decoding: str) -> str:
        self.calls.append(prompt)
        return self.text


class ExternalClient:
    """HTTP text-generation service: POST {prompt, max_new_tokens, decoding}.

    The bearer token is read from the TINYALLM_API_TOKEN environment
    variable, never from configuration files.
    """

    client_id = "external"

    def __init__(self, endpoint: str, timeout: float = 30.0, transport=None) -> None:
        import httpx

        self.endpoint = endpoint
        headers = {}
        token = os.environ.get(TOKEN_ENV_VAR)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def generate(self, prompt: str, max_new_tokens: int, decoding: str) -> str:
        import httpx

        payload = {"prompt": prompt, "max_new_tokens": max_new_tokens, "decoding": decoding}
        try:
            resp = self._http.post(self.endpoint, json=payload)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise GenerationError(f"external generator failed: {exc}", prompt=prompt) from exc
        return resp.json().get("text", "")

    def close(self) -> None:
        self._http.close()


# ---------------------------------------------------------------------------
# Samples and manifests
# ---------------------------------------------------------------------------


@dataclass
class TrainingSample:
    """One prompt/response pair plus the provenance needed to audit it."""

    clip_id: str
    seed: SeedPrompt
    gen: GenerationPrompt
    final_prompt: str
    response: str
    placeholder_span: tuple[int, int]
    generator_id: str
    absent_tags_used: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "seed_kind": self.seed.kind,
            "seed_text": self.seed.text,
            "gen_kind": self.gen.kind,
            "gen_text": self.gen.text,
            "final_prompt": self.final_prompt,
            "response": self.response,
            "placeholder_span": list(self.placeholder_span),
            "generator_id": self.generator_id,
            "absent_tags_used": list(self.absent_tags_used),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "TrainingSample":
        return cls(
            clip_id=payload["clip_id"],
            seed=SeedPrompt(payload["seed_kind"], payload["seed_text"]),
            gen=GenerationPrompt(payload["gen_kind"], payload["gen_text"]),
            final_prompt=payload["final_prompt"],
            response=payload["response"],
            placeholder_span=tuple(payload["placeholder_span"]),
            generator_id=payload["generator_id"],
            absent_tags_used=tuple(payload["absent_tags_used"]),
        )


def effective_count_of(samples) -> int:
    """Data-point accounting: a combined sample carries both a present and
    an absent description, so it counts as two."""
    return sum(2 if s.gen.kind == "combined" else 1 for s in samples)


@dataclass
class DatasetManifest:
    """Named set of training samples with its accounting and provenance."""

    name: str
    config_kind: str
    samples: list[TrainingSample]
    effective_count: int
    meta: dict = field(default_factory=dict)
    version: str = DATASET_VERSION

    def save_jsonl(self, path: str | Path) -> None:
        """Header line then one sample per line, so synthesis can resume."""
        header = {
            "record": "header",
            "version": self.version,
            "name": self.name,
            "config_kind": self.config_kind,
            "effective_count": self.effective_count,
            "meta": self.meta,
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for s in self.samples:
                fh.write(json.dumps({"record": "sample", **s.to_json()}, sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "DatasetManifest":
        lines = Path(path).read_text("utf-8").splitlines()
        if not lines:
            raise DataError(f"{path}: empty dataset file")
        header = json.loads(lines[0])
        if header.get("record") != "header":
            raise DataError(f"{path}: first line is not a dataset header")
        samples = []
        for line in lines[1:]:
            if not line.strip():
                continue
            payload = json.loads(line)
            if payload.get("record") != "sample":
                raise DataError(f"{path}: unexpected record kind {payload.get('record')!r}")
            samples.append(TrainingSample.from_json(payload))
        return cls(
            name=header["name"],
            config_kind=header["config_kind"],
            samples=samples,
            effective_count=header["effective_count"],
            meta=header.get("meta", {}),
            version=header.get("version", DATASET_VERSION),
        )


def build_training_sample(
    spec: ClipSpec,
    ontology: Ontology,
    gen_kind: str,
    generator,
    rng: Stream,
    n_negatives: int = DEFAULT_NEGATIVES_PER_SAMPLE,
) -> TrainingSample:
    """Assemble one sample for a clip: seed, prompt, absent draw, response."""
    seed = seed_prompt_for_clip(spec, ontology)
    gen = GenerationPrompt.of_kind(gen_kind)
    final_prompt, span = build_final_prompt(seed, gen)
    present_names = [ontology.display(t) for t in spec.tags]
    absent_tags: tuple[str, ...] = ()
    absent_names: list[str] = []
    if gen_kind in ("negative", "combined"):
        n_absent = len(ontology) - len(spec.tags)
        k = n_negatives if gen_kind == "negative" else min(n_negatives, n_absent)
        absent_tags = tuple(sample_absent_events(spec.tags, ontology, k, rng.derive("absent")))
        absent_names = [ontology.display(t) for t in absent_tags]
    response = generator.respond(gen_kind, present_names, absent_names, final_prompt)
    return TrainingSample(
        clip_id=spec.clip_id,
        seed=seed,
        gen=gen,
        final_prompt=final_prompt,
        response=response,
        placeholder_span=span,
        generator_id=generator.generator_id,
        absent_tags_used=absent_tags,
    )


def build_dataset(
    pool: list[ClipSpec],
    ontology: Ontology,
    gen_kind: str,
    n: int,
    generator,
    rng: Stream,
    name: str | None = None,
) -> DatasetManifest:
    """n samples of one kind over shuffled round-robin draws from the pool."""
    if n < 1:
        raise ConfigurationError(f"dataset size must be >= 1, got {n}")
    if not pool:
        raise ConfigurationError("clip pool is empty")
    order = rng.derive("order").shuffle(pool)
    samples = []
    for i in range(n):
        spec = order[i % len(order)]
        samples.append(
            build_training_sample(spec, ontology, gen_kind, generator, rng.derive("sample", i))
        )
    return DatasetManifest(
        name=name or f"{gen_kind}-{n}",
        config_kind=gen_kind,
        samples=samples,
        effective_count=effective_count_of(samples),
    )


def build_ablation_splits(
    pool: list[ClipSpec],
    n_per_arm: int,
    ontology: Ontology,
    generator,
    rng: Stream,
) -> dict[str, DatasetManifest]:
    """The three equal-information configurations of size 2N.

    pos_only: 2N positive samples (distinct clips when the pool has 2N,
    otherwise two per clip over N clips); pos_neg: N positive + N negative;
    combined: N combined samples counting double.  All three draw from the
    same pool and share effective_count 2N.
    """
    n = n_per_arm
    if n < 1:
        raise ConfigurationError(f"N must be >= 1, got {n}")
    if len(pool) < n:
        raise ConfigurationError(f"pool has {len(pool)} clips; need at least N={n}")

    def pick(label: str, count: int) -> list[ClipSpec]:
        if count <= len(pool):
            return rng.derive(label).sample(pool, count)
        order = rng.derive(label).shuffle(pool)
        return [order[i % len(order)] for i in range(count)]

    pos_sampling = "distinct_clips" if len(pool) >= 2 * n else "two_per_clip"
    manifests: dict[str, DatasetManifest] = {}

    pos_clips = pick("pos_only", 2 * n)
    samples = [
        build_training_sample(c, ontology, "positive", generator, rng.derive("pos_only", i))
        for i, c in enumerate(pos_clips)
    ]
    manifests["pos_only"] = DatasetManifest(
        name=f"pos_only-N{n}",
        config_kind="pos_only",
        samples=samples,
        effective_count=effective_count_of(samples),
        meta={"n_per_arm": n, "pos_sampling": pos_sampling},
    )

    samples = [
        build_training_sample(c, ontology, "positive", generator, rng.derive("pn_pos", i))
        for i, c in enumerate(pick("pn_pos", n))
    ] + [
        build_training_sample(c, ontology, "negative", generator, rng.derive("pn_neg", i))
        for i, c in enumerate(pick("pn_neg", n))
    ]
    manifests["pos_neg"] = DatasetManifest(
        name=f"pos_neg-N{n}",
        config_kind="pos_neg",
        samples=samples,
        effective_count=effective_count_of(samples),
        meta={"n_per_arm": n},
    )

    samples = [
        build_training_sample(c, ontology, "combined", generator, rng.derive("comb", i))
        for i, c in enumerate(pick("comb", n))
    ]
    manifests["combined"] = DatasetManifest(
        name=f"combined-N{n}",
        config_kind="combined",
        samples=samples,
        effective_count=effective_count_of(samples),
        meta={"n_per_arm": n},
    )

    for m in manifests.values():
        assert m.effective_count == 2 * n
    return manifests
