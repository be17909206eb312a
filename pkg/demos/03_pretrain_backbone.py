"""Pretrain the template language model and inspect what it learned.

Default settings are sized for a quick look (a few minutes); pass
--steps 6000 --n-lines 60000 for the full reference recipe.

Run:  python3 demos/03_pretrain_backbone.py [--steps 600] [--out /tmp/allm_demo/backbone]
"""

from __future__ import annotations

import argparse

from tinyallm.audio_world import load_default_ontology
from tinyallm.backbone import BackboneClient, PretrainConfig, pretrain_toy_lm, save_backbone
from tinyallm.datagen import GenerationPrompt, SeedPrompt, build_final_prompt
from tinyallm.pipeline import build_pretrain_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-lines", type=int, default=12000)
    parser.add_argument("--steps", type=int, default=600)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="optionally save the backbone artifact")
    args = parser.parse_args()

    ontology = load_default_ontology()
    lines = build_pretrain_corpus(ontology, n_lines=args.n_lines, seed=args.seed)
    print(f"corpus: {len(lines)} lines ({len(set(lines))} unique)")
    print("sample pair line:")
    prompt, response = next(ln for ln in lines if "\t" in ln).split("\t")
    print(f"  prompt   {prompt!r}")
    print(f"  response {response!r}")

    config = PretrainConfig(steps=args.steps, seed=args.seed)
    print(f"\npretraining for {config.steps} steps ...")
    params, report = pretrain_toy_lm(lines, config)
    print(f"  final loss            {report['final_loss']:.4f}")
    print(f"  mean loss (last 100)  {report['mean_last_100']:.4f}")
    print(f"  held-out perplexity   {report['held_out_perplexity']:.4f}")
    print(f"  vocabulary            {report['vocab_size']} types")

    client = BackboneClient(params)
    seed = SeedPrompt(kind="caption", text="Dog barking can be heard as rain falling continues.")
    print("\ngreedy continuations after the frozen snapshot:")
    for kind, question in [
        ("positive generation", None),
        ("presence question", "Is there a dog barking sound in the audio? Answer yes or no."),
        ("presence question", "Is there a car horn sound in the audio? Answer yes or no."),
    ]:
        if question is None:
            gen = GenerationPrompt.of_kind("positive")
        else:
            gen = GenerationPrompt(kind="question", text=question)
        final, _ = build_final_prompt(seed, gen)
        print(f"  [{kind}] {gen.text!r}")
        print(f"    -> {client.generate(final, 24, 'greedy')!r}")

    if args.out:
        save_backbone(args.out, params)
        print(f"\nbackbone artifact written to {args.out}")


if __name__ == "__main__":
    main()
