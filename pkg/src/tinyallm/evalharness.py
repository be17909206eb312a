"""Probe construction, answer extraction, and the binary metric battery.

Three probe families run against any endpoint that answers (waveform,
question) with text: hallucination (is a named sound present), synonym/
hypernym (is the source related to a phrase), and closed-vocabulary QA
(presence plus event counts).  Gold labels come from clip metadata, so
every item is checkable without human annotation.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .audio_world import ClipSpec, CorpusManifest, Ontology
from .errors import ConfigurationError
from .rng import Stream

__all__ = [
    "PROBE_VERSION",
    "HALLUC_TEMPLATE",
    "SYNHYP_TEMPLATE",
    "COUNT_TEMPLATE",
    "NUMBER_WORDS",
    "ProbeItem",
    "Prediction",
    "ConfusionMatrix",
    "MetricsReport",
    "build_hallucination_probe",
    "build_synhyp_probe",
    "build_aqa_probe",
    "synhyp_phrases_for",
    "probe_balance",
    "run_eval",
    "extract_yes_no",
    "normalize_answer",
    "confusion",
    "metrics",
    "aqa_accuracy",
    "run_full_eval",
]

log = logging.getLogger(__name__)

PROBE_VERSION = "probes-v1"

# "Answer yes or no." keeps the small backbone inside its template
# distribution; without it the closed vocab rarely emits a bare yes/no.
HALLUC_TEMPLATE = "Is there a {name} sound in the audio? Answer yes or no."
SYNHYP_TEMPLATE = "Is the sound from an object that is {phrase}? Answer yes or no."
COUNT_TEMPLATE = "How many distinct sound events occur in the audio? Answer with a number word."

NUMBER_WORDS = {1: "one", 2: "two", 3: "three"}


@dataclass(frozen=True)
class ProbeItem:
    clip_id: str
    question: str
    probe_kind: str  # hallucination | synhyp | aqa
    queried_concept: str
    gold: str | None = None  # yes | no for binary kinds
    gold_answer: str | None = None  # normalized string for aqa

    def to_json(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "question": self.question,
            "probe_kind": self.probe_kind,
            "queried_concept": self.queried_concept,
            "gold": self.gold,
            "gold_answer": self.gold_answer,
        }


@dataclass
class Prediction:
    item: ProbeItem
    raw_text: str
    extracted: str
    error: str | None = None

    def to_json(self) -> dict:
        return {**self.item.to_json(), "raw_text": self.raw_text, "extracted": self.extracted, "error": self.error}


@dataclass
class ConfusionMatrix:
    tp_yes: int = 0
    fp_yes: int = 0
    fn_yes: int = 0
    tp_no: int = 0
    fp_no: int = 0
    fn_no: int = 0
    unknown_count: int = 0
    support_yes: int = 0
    support_no: int = 0


@dataclass
class MetricsReport:
    acc: float
    f1_yes: float
    f1_no: float
    f1_weighted: float
    yes_rate: float
    counts: ConfusionMatrix
    flags: list[str] = field(default_factory=list)

    def as_percentages(self) -> dict:
        return {
            "acc": round(100.0 * self.acc, 2),
            "f1_yes": round(100.0 * self.f1_yes, 2),
            "f1_no": round(100.0 * self.f1_no, 2),
            "f1_weighted": round(100.0 * self.f1_weighted, 2),
            "yes_rate": round(100.0 * self.yes_rate, 2),
        }


# ---------------------------------------------------------------------------
# Probe construction
# ---------------------------------------------------------------------------


def _eval_clips(corpus: CorpusManifest) -> list[ClipSpec]:
    clips = [c for c in corpus.clips if c.split == "eval"]
    if not clips:
        raise ConfigurationError("corpus has no eval split")
    return clips


def build_hallucination_probe(corpus: CorpusManifest, rng: Stream) -> list[ProbeItem]:
    """One gold-yes and one gold-no presence question per eval clip."""
    ontology = corpus.ontology
    items = []
    for clip in _eval_clips(corpus):
        clip_rng = rng.derive("halluc", clip.clip_id)
        present = list(clip.tags)
        absent = [cid for cid in ontology.ids if cid not in clip.tags]
        if not absent:
            raise ConfigurationError(f"clip {clip.clip_id} leaves no absent class to probe")
        yes_tag = clip_rng.choice(present)
        no_tag = clip_rng.choice(absent)
        items.append(
            ProbeItem(
                clip_id=clip.clip_id,
                question=HALLUC_TEMPLATE.format(name=ontology.display(yes_tag)),
                probe_kind="hallucination",
                queried_concept=yes_tag,
                gold="yes",
            )
        )
        items.append(
            ProbeItem(
                clip_id=clip.clip_id,
                question=HALLUC_TEMPLATE.format(name=ontology.display(no_tag)),
                probe_kind="hallucination",
                queried_concept=no_tag,
                gold="no",
            )
        )
    return items


def synhyp_phrases_for(ontology: Ontology, class_id: str) -> list[str]:
    """Every rendered relation phrase that truthfully describes the class."""
    event = ontology.get(class_id)
    phrases = [f"a type of {h}" for h in event.hypernyms]
    phrases += [f"associated with {s}" for s in event.synonyms]
    return phrases


def build_synhyp_probe(corpus: CorpusManifest, ontology: Ontology, rng: Stream) -> list[ProbeItem]:
    """Relation questions: gold-yes for a present tag's phrase, gold-no for a
    phrase true only of absent tags.  Clips with no safe negative are skipped."""
    items = []
    for clip in _eval_clips(corpus):
        clip_rng = rng.derive("synhyp", clip.clip_id)
        present = set(clip.tags)
        true_phrases = {p for t in present for p in synhyp_phrases_for(ontology, t)}
        negative_pool = sorted(
            {
                p
                for cid in ontology.ids
                if cid not in present
                for p in synhyp_phrases_for(ontology, cid)
            }
            - true_phrases
        )
        if not negative_pool:
            log.warning("synhyp probe: no safe negative phrase for clip %s; skipped", clip.clip_id)
            continue
        yes_tag = clip_rng.choice(sorted(present))
        yes_phrase = clip_rng.choice(synhyp_phrases_for(ontology, yes_tag))
        no_phrase = clip_rng.choice(negative_pool)
        items.append(
            ProbeItem(
                clip_id=clip.clip_id,
                question=SYNHYP_TEMPLATE.format(phrase=yes_phrase),
                probe_kind="synhyp",
                queried_concept=yes_phrase,
                gold="yes",
            )
        )
        items.append(
            ProbeItem(
                clip_id=clip.clip_id,
                question=SYNHYP_TEMPLATE.format(phrase=no_phrase),
                probe_kind="synhyp",
                queried_concept=no_phrase,
                gold="no",
            )
        )
    return items


def build_aqa_probe(corpus: CorpusManifest, rng: Stream) -> list[ProbeItem]:
    """Count question plus one presence question per eval clip; the presence
    gold alternates so answers stay balanced."""
    ontology = corpus.ontology
    items = []
    for i, clip in enumerate(_eval_clips(corpus)):
        clip_rng = rng.derive("aqa", clip.clip_id)
        items.append(
            ProbeItem(
                clip_id=clip.clip_id,
                question=COUNT_TEMPLATE,
                probe_kind="aqa",
                queried_concept="event_count",
                gold_answer=NUMBER_WORDS[len(clip.tags)],
            )
        )
        want_yes = i % 2 == 0
        if want_yes:
            tag = clip_rng.choice(list(clip.tags))
        else:
            tag = clip_rng.choice([cid for cid in ontology.ids if cid not in clip.tags])
        items.append(
            ProbeItem(
                clip_id=clip.clip_id,
                question=HALLUC_TEMPLATE.format(name=ontology.display(tag)),
                probe_kind="aqa",
                queried_concept=tag,
                gold_answer="yes" if want_yes else "no",
            )
        )
    return items


def probe_balance(items: list[ProbeItem]) -> tuple[int, int]:
    """(gold yes count, gold no count) over binary items."""
    yes = sum(1 for it in items if it.gold == "yes")
    no = sum(1 for it in items if it.gold == "no")
    return yes, no


# ---------------------------------------------------------------------------
# Running a model over items
# ---------------------------------------------------------------------------


def run_eval(
    endpoint,
    items: list[ProbeItem],
    corpus: CorpusManifest,
    decoding: str = "greedy",
    max_new_tokens: int = 24,
) -> list[Prediction]:
    """One order-preserving prediction per item; endpoint failures become
    unknown answers instead of aborting the run."""
    if decoding != "greedy":
        raise ConfigurationError(f"only greedy decoding is supported, got {decoding!r}")
    waveforms: dict[str, np.ndarray] = {}
    predictions = []
    for item in items:
        if item.clip_id not in waveforms:
            waveforms[item.clip_id] = corpus.realize(corpus.clip(item.clip_id)).waveform
        try:
            raw = endpoint.answer(waveforms[item.clip_id], item.question, max_new_tokens)
        except Exception as e:  # noqa: BLE001 - any endpoint fault maps to unknown
            predictions.append(Prediction(item=item, raw_text="", extracted="unknown", error=str(e)))
            continue
        if item.probe_kind == "aqa":
            extracted = normalize_answer(raw) or "unknown"
        else:
            extracted = extract_yes_no(raw)
        predictions.append(Prediction(item=item, raw_text=raw, extracted=extracted))
    return predictions


_NON_WORD_RE = re.compile(r"[^a-z0-9'\s]+")


def normalize_answer(raw_text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    return " ".join(_NON_WORD_RE.sub(" ", raw_text.lower()).split())


def extract_yes_no(raw_text: str) -> str:
    """First token wins; otherwise a unique yes/no anywhere; else unknown."""
    tokens = normalize_answer(raw_text).split()
    if not tokens:
        return "unknown"
    if tokens[0] in ("yes", "no"):
        return tokens[0]
    seen = {t for t in tokens if t in ("yes", "no")}
    if len(seen) == 1:
        return seen.pop()
    return "unknown"


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def confusion(predictions: list[Prediction]) -> ConfusionMatrix:
    """Class tallies; unknown is a miss for the gold class, a hit for none."""
    cm = ConfusionMatrix()
    for p in predictions:
        if p.item.gold not in ("yes", "no"):
            raise ValueError(f"confusion needs binary items, got probe_kind {p.item.probe_kind!r}")
        gold, pred = p.item.gold, p.extracted
        if pred == "unknown":
            cm.unknown_count += 1
        if gold == "yes":
            cm.support_yes += 1
            if pred == "yes":
                cm.tp_yes += 1
            else:
                cm.fn_yes += 1
                if pred == "no":
                    cm.fp_no += 1
        else:
            cm.support_no += 1
            if pred == "no":
                cm.tp_no += 1
            else:
                cm.fn_no += 1
                if pred == "yes":
                    cm.fp_yes += 1
    return cm


def _f1(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    total = cm.support_yes + cm.support_no
    if total == 0:
        raise ValueError("no predictions to score")
    flags = []
    if cm.support_yes == 0:
        flags.append("no gold-yes items; f1_yes defined as 0")
    if cm.support_no == 0:
        flags.append("no gold-no items; f1_no defined as 0")
    f1_yes = _f1(cm.tp_yes, cm.fp_yes, cm.fn_yes)
    f1_no = _f1(cm.tp_no, cm.fp_no, cm.fn_no)
    return MetricsReport(
        acc=(cm.tp_yes + cm.tp_no) / total,
        f1_yes=f1_yes,
        f1_no=f1_no,
        f1_weighted=(cm.support_yes * f1_yes + cm.support_no * f1_no) / total,
        yes_rate=(cm.tp_yes + cm.fp_yes) / total,
        counts=cm,
        flags=flags,
    )


def aqa_accuracy(predictions: list[Prediction]) -> float:
    """Exact match over normalized answers; unknown counts wrong."""
    if not predictions:
        raise ValueError("no predictions to score")
    hits = sum(
        1
        for p in predictions
        if p.extracted != "unknown" and p.extracted == normalize_answer(p.item.gold_answer or "")
    )
    return hits / len(predictions)


# ---------------------------------------------------------------------------
# Full battery
# ---------------------------------------------------------------------------


def run_full_eval(
    endpoint,
    corpus: CorpusManifest,
    seed: int = 0,
    max_new_tokens: int = 24,
    probes: tuple[str, ...] = ("halluc", "synhyp", "aqa"),
) -> tuple[dict, list[Prediction]]:
    """All requested probes -> (report dict in percentage units, predictions).

    The report carries no timestamps or machine state, so identical inputs
    produce byte-identical JSON.
    """
    rng = Stream(seed).derive("eval", PROBE_VERSION)
    all_preds: list[Prediction] = []
    report: dict = {
        "acc": None,
        "f1_yes": None,
        "f1_no": None,
        "f1_weighted": None,
        "yes_rate": None,
        "aqa_acc": None,
        "synhyp_acc": None,
        "n_items": 0,
        "config": {
            "seed": seed,
            "probe_version": PROBE_VERSION,
            "decoding": "greedy",
            "max_new_tokens": max_new_tokens,
            "probes": list(probes),
        },
    }
    if "halluc" in probes:
        items = build_hallucination_probe(corpus, rng)
        preds = run_eval(endpoint, items, corpus, max_new_tokens=max_new_tokens)
        all_preds += preds
        report.update(metrics(confusion(preds)).as_percentages())
        report["config"]["n_halluc"] = len(items)
    if "synhyp" in probes:
        items = build_synhyp_probe(corpus, corpus.ontology, rng)
        preds = run_eval(endpoint, items, corpus, max_new_tokens=max_new_tokens)
        all_preds += preds
        report["synhyp_acc"] = metrics(confusion(preds)).as_percentages()["acc"]
        report["config"]["n_synhyp"] = len(items)
    if "aqa" in probes:
        items = build_aqa_probe(corpus, rng)
        preds = run_eval(endpoint, items, corpus, max_new_tokens=max_new_tokens)
        all_preds += preds
        report["aqa_acc"] = round(100.0 * aqa_accuracy(preds), 2)
        report["config"]["n_aqa"] = len(items)
    report["n_items"] = len(all_preds)
    return report, all_preds
