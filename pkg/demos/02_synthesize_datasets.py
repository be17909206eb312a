"""Derive contrastive present/absent training data from clip metadata.

Shows the three prompt kinds, the rule generator's responses, and the
equal-budget ablation splits.

Run:  python3 demos/02_synthesize_datasets.py
"""

from __future__ import annotations

import argparse

from tinyallm.audio_world import CorpusConfig, build_corpus, load_default_ontology
from tinyallm.datagen import (
    GENERATION_PROMPT_TEXTS,
    RuleGenerator,
    build_ablation_splits,
    build_dataset,
    effective_count_of,
    seed_prompt_for_clip,
)
from tinyallm.rng import Stream


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=8, help="samples per dataset")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    ontology = load_default_ontology()
    corpus = build_corpus(CorpusConfig(n_train=20, n_eval=10, ontology_size=8, seed=args.seed))
    generator = RuleGenerator()

    print("generation prompt kinds:")
    for kind, text in sorted(GENERATION_PROMPT_TEXTS.items()):
        print(f"  {kind:9} {text!r}")

    spec = corpus.train_clips[0]
    seed = seed_prompt_for_clip(spec, ontology)
    print(f"\nseed prompt for {spec.clip_id} (tags {spec.tags}):")
    print(f"  {seed.text!r}")

    for kind in ("positive", "negative", "combined"):
        data = build_dataset(
            corpus.train_clips, ontology, kind, args.n, generator,
            Stream(args.seed).derive("demo", kind), name=f"demo-{kind}",
        )
        sample = data.samples[0]
        print(f"\n--- dataset kind={kind}: {len(data.samples)} samples, "
              f"effective count {effective_count_of(data.samples)}")
        print(f"  final_prompt     {sample.final_prompt!r}")
        print(f"  placeholder span {sample.placeholder_span}")
        print(f"  response         {sample.response!r}")

    splits = build_ablation_splits(
        corpus.train_clips, args.n, ontology, generator,
        Stream(args.seed).derive("demo", "ablation"),
    )
    print("\nablation splits (equal effective budget 2N):")
    for arm, data in splits.items():
        print(f"  {arm:9} {len(data.samples):3d} samples, "
              f"effective {effective_count_of(data.samples)}")


if __name__ == "__main__":
    main()
