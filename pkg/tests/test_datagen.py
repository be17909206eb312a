"""Prompt assembly, response rendering, generators, ablation accounting."""

from __future__ import annotations

import collections

import httpx
import pytest

from tinyallm import audio_world as aw
from tinyallm import datagen as dg
from tinyallm.errors import (
    ConfigurationError,
    EmptyResponseError,
    GenerationError,
    InsufficientNegativesError,
)
from tinyallm.rng import Stream


def _ontology():
    return aw.load_default_ontology().subset(8)


def _pool(n_train=24, seed=0):
    cfg = aw.CorpusConfig(n_train=n_train, n_eval=8, ontology_size=8, seed=seed)
    m = aw.build_corpus(cfg)
    return m.train_clips, m.ontology


def test_final_prompt_worked_example():
    seed = dg.SeedPrompt("caption", "A woman talks nearby as water pours.")
    gen = dg.GenerationPrompt.of_kind("positive")
    final, span = dg.build_final_prompt(seed, gen)
    assert final == (
        "[Begin of audio] A woman talks nearby as water pours. [End of audio] Replay the audio."
    )
    assert final[span[0] : span[1]] == "A woman talks nearby as water pours."


def test_final_prompt_tag_seed_orders_delimiters():
    seed = dg.SeedPrompt("tag", "dog barking, rain falling")
    final, span = dg.build_final_prompt(seed, dg.GenerationPrompt.of_kind("negative"))
    b = final.index(dg.BEGIN_DELIM)
    e = final.index(dg.END_DELIM)
    assert b == 0 and b < span[0] < span[1] <= e
    assert final[span[0] : span[1]] == seed.text


def test_prompt_texts_versioned():
    assert dg.GenerationPrompt.of_kind("positive").text == "Replay the audio."
    assert (
        dg.GenerationPrompt.of_kind("negative").text
        == "Identify sounds that are absent as contrasting examples."
    )
    assert (
        dg.GenerationPrompt.of_kind("combined").text
        == "Replay the audio and identify sounds that are absent as contrasting examples."
    )
    with pytest.raises(ValueError):
        dg.GenerationPrompt.of_kind("neutral")


def test_parse_final_prompt_round_trip():
    for kind in ("positive", "negative", "combined"):
        seed = dg.SeedPrompt("caption", "Rain falling can be heard in the recording.")
        gen = dg.GenerationPrompt.of_kind(kind)
        final, _ = dg.build_final_prompt(seed, gen)
        assert dg.parse_final_prompt(final) == (seed.text, gen.text)


def test_parse_final_prompt_survives_delimiter_in_seed():
    seed = dg.SeedPrompt("caption", f"tricky {dg.END_DELIM} middle")
    gen = dg.GenerationPrompt.of_kind("positive")
    final, span = dg.build_final_prompt(seed, gen)
    assert dg.parse_final_prompt(final) == (seed.text, gen.text)
    assert final[span[0] : span[1]] == seed.text


def test_empty_texts_rejected():
    with pytest.raises(ValueError):
        dg.SeedPrompt("caption", "")
    with pytest.raises(ValueError):
        dg.build_final_prompt(
            dg.SeedPrompt("caption", "x"), dg.GenerationPrompt("positive", "")
        )


def test_sample_absent_events_complement_exact():
    onto = _ontology()
    present = onto.ids[:6]
    got = dg.sample_absent_events(present, onto, 2, Stream(0))
    assert sorted(got) == sorted(onto.ids[6:])


def test_sample_absent_events_insufficient():
    onto = _ontology()
    with pytest.raises(InsufficientNegativesError):
        dg.sample_absent_events(onto.ids, onto, 1, Stream(0))
    with pytest.raises(InsufficientNegativesError):
        dg.sample_absent_events(onto.ids[:6], onto, 3, Stream(0))


def test_sample_absent_events_uniform_frequency():
    # [DERIVED] oracle: |complement| = 4, k = 1, 10000 draws; every class
    # frequency must sit within 25% +/- 2% (binomial 3-sigma is ~1.3%).
    onto = _ontology()
    present = onto.ids[:4]
    rng = Stream(123)
    counts = collections.Counter()
    for i in range(10000):
        counts[dg.sample_absent_events(present, onto, 1, rng.derive(i))[0]] += 1
    for cid in onto.ids[4:]:
        assert abs(counts[cid] / 10000 - 0.25) < 0.02, counts


def test_rule_response_positive_shapes():
    assert dg.render_rule_response("positive", ["water pouring"]) == "Water pouring sounds"
    assert (
        dg.render_rule_response("positive", ["water pouring", "woman talking"])
        == "Water pouring sounds, woman talking in the background"
    )


def test_rule_response_negative_numbered_list():
    resp = dg.render_rule_response(
        "negative", absent_names=["a car driving by", "birds chirping", "a dog barking"]
    )
    header, items = resp.split("\n")
    assert "not present in the audio" in header
    assert items == "1. A car driving by 2. Birds chirping 3. A dog barking"


def test_rule_response_combined_sections_ordered():
    resp = dg.render_rule_response(
        "combined", ["a woman's voice"], ["a dog barking", "the door bang"]
    )
    assert dg.PRESENT_HEADER in resp and dg.ABSENT_HEADER in resp
    assert resp.index(dg.PRESENT_HEADER) < resp.index(dg.ABSENT_HEADER)
    assert "1. A woman's voice" in resp
    assert "1. A dog barking 2. The door bang" in resp


def test_rule_response_requires_names():
    with pytest.raises(ValueError):
        dg.render_rule_response("positive", [])
    with pytest.raises(ValueError):
        dg.render_rule_response("negative", absent_names=[])
    with pytest.raises(ValueError):
        dg.render_rule_response("combined", ["x"], [])


def test_synthesize_with_lm_mock_and_errors():
    client = dg.MockClient("canned text")
    assert dg.synthesize_with_lm(client, "p") == "canned text"
    assert client.calls == ["p"]
    with pytest.raises(EmptyResponseError):
        dg.synthesize_with_lm(dg.MockClient("   "), "p")

    class Failing:
        client_id = "boom"

        def generate(self, prompt, max_new_tokens, decoding):
            raise TimeoutError("slow")

    with pytest.raises(GenerationError) as exc:
        dg.synthesize_with_lm(Failing(), "the prompt")
    assert exc.value.prompt == "the prompt"


def test_external_client_posts_and_reads_text(monkeypatch):
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["auth"] = request.headers.get("authorization")
        seen["json"] = request.read()
        return httpx.Response(200, json={"text": " generated stuff "})

    monkeypatch.setenv(dg.TOKEN_ENV_VAR, "sekret")
    client = dg.ExternalClient("http://gen.local/v1", transport=httpx.MockTransport(handler))
    out = dg.synthesize_with_lm(client, "describe")
    assert out == "generated stuff"
    assert seen["auth"] == "Bearer sekret"
    assert b"greedy" in seen["json"]
    client.close()


def test_external_client_http_error_raises_generation_error():
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(500, json={"err": "down"})

    client = dg.ExternalClient("http://gen.local/v1", transport=httpx.MockTransport(handler))
    with pytest.raises(GenerationError):
        dg.synthesize_with_lm(client, "p")
    client.close()


def test_build_training_sample_positive_soundness():
    pool, onto = _pool()
    spec = pool[0]
    s = dg.build_training_sample(spec, onto, "positive", dg.RuleGenerator(), Stream(1))
    assert s.absent_tags_used == ()
    assert s.final_prompt[s.placeholder_span[0] : s.placeholder_span[1]] == s.seed.text
    for t in spec.tags:
        assert onto.display(t) in s.response.lower()
    present_names = {onto.display(t) for t in spec.tags}
    for other in set(onto.ids) - set(spec.tags):
        assert onto.display(other) not in s.response.lower() or onto.display(other) in present_names


def test_build_training_sample_negative_disjoint():
    pool, onto = _pool()
    for i, spec in enumerate(pool[:8]):
        s = dg.build_training_sample(spec, onto, "negative", dg.RuleGenerator(), Stream(i))
        assert len(s.absent_tags_used) == 3
        assert not set(s.absent_tags_used) & set(spec.tags)
        for t in s.absent_tags_used:
            assert onto.display(t) in s.response.lower()


def test_build_training_sample_combined_sections():
    pool, onto = _pool()
    s = dg.build_training_sample(pool[0], onto, "combined", dg.RuleGenerator(), Stream(5))
    assert dg.PRESENT_HEADER in s.response and dg.ABSENT_HEADER in s.response
    assert s.absent_tags_used and not set(s.absent_tags_used) & set(pool[0].tags)


def test_generator_swap_keeps_prompt_fields():
    pool, onto = _pool()
    spec = pool[3]
    a = dg.build_training_sample(spec, onto, "negative", dg.RuleGenerator(), Stream(9))
    b = dg.build_training_sample(
        spec, onto, "negative", dg.LmGenerator(dg.MockClient("alt")), Stream(9)
    )
    assert a.final_prompt == b.final_prompt
    assert a.placeholder_span == b.placeholder_span
    assert a.response != b.response
    assert (a.generator_id, b.generator_id) == ("rule", "mock")


def test_build_dataset_round_trip_jsonl(tmp_path):
    pool, onto = _pool()
    m = dg.build_dataset(pool, onto, "combined", 6, dg.RuleGenerator(), Stream(2))
    assert len(m.samples) == 6 and m.effective_count == 12
    path = tmp_path / "ds.jsonl"
    m.save_jsonl(path)
    loaded = dg.DatasetManifest.load_jsonl(path)
    assert loaded.name == m.name and loaded.effective_count == m.effective_count
    assert [s.to_json() for s in loaded.samples] == [s.to_json() for s in m.samples]


def test_ablation_splits_accounting():
    pool, onto = _pool(n_train=24)
    for n in (4, 7):
        splits = dg.build_ablation_splits(pool, n, onto, dg.RuleGenerator(), Stream(3))
        assert set(splits) == {"pos_only", "pos_neg", "combined"}
        assert len(splits["pos_only"].samples) == 2 * n
        assert all(s.gen.kind == "positive" for s in splits["pos_only"].samples)
        kinds = [s.gen.kind for s in splits["pos_neg"].samples]
        assert kinds.count("positive") == n and kinds.count("negative") == n
        assert len(splits["combined"].samples) == n
        pool_ids = {c.clip_id for c in pool}
        for m in splits.values():
            assert m.effective_count == 2 * n
            assert {s.clip_id for s in m.samples} <= pool_ids


def test_ablation_two_per_clip_fallback_recorded():
    pool, onto = _pool(n_train=10)
    splits = dg.build_ablation_splits(pool, 8, onto, dg.RuleGenerator(), Stream(3))
    assert splits["pos_only"].meta["pos_sampling"] == "two_per_clip"
    assert len(splits["pos_only"].samples) == 16
    assert splits["pos_only"].effective_count == 16


def test_ablation_degenerate_sizes_error():
    pool, onto = _pool(n_train=10)
    with pytest.raises(ConfigurationError):
        dg.build_ablation_splits(pool, 0, onto, dg.RuleGenerator(), Stream(0))
    with pytest.raises(ConfigurationError):
        dg.build_ablation_splits(pool, 11, onto, dg.RuleGenerator(), Stream(0))
