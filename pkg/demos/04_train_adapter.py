"""Train the audio adapter against a frozen backbone and verify freezing.

Expects a saved backbone artifact (see demo 03 or `tinyallm pretrain-lm`).
Defaults are sized for a quick look; the reference run uses --steps 2000.

Run:  python3 demos/04_train_adapter.py --backbone /tmp/allm_demo/backbone \
          [--steps 300] [--out /tmp/allm_demo/run]
"""

from __future__ import annotations

import argparse

from tinyallm.audio_world import CorpusConfig, build_corpus, load_default_ontology
from tinyallm.backbone import load_backbone
from tinyallm.datagen import RuleGenerator, build_dataset
from tinyallm.encoder import init_encoder
from tinyallm.rng import Stream
from tinyallm.trainer import TrainConfig, summarize_log, train_adapter


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--backbone", required=True)
    parser.add_argument("--steps", type=int, default=300)
    parser.add_argument("--n", type=int, default=32, help="training samples")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    ontology = load_default_ontology()
    corpus = build_corpus(CorpusConfig(n_train=50, n_eval=12, ontology_size=8, seed=args.seed))
    dataset = build_dataset(
        corpus.train_clips, ontology, "combined", args.n, RuleGenerator(),
        Stream(args.seed).derive("demo-data"), name="demo-combined",
    )
    print(f"dataset: {len(dataset.samples)} combined samples from {len(corpus.train_clips)} clips")

    backbone = load_backbone(args.backbone)
    encoder = init_encoder(seed=0)
    config = TrainConfig(steps=args.steps, seed=args.seed, out_dir=args.out,
                         checkpoint_every=0)
    print(f"training adapter for {config.steps} steps ...")
    # train_adapter digest-checks the frozen encoder/backbone itself and
    # raises if anything moved
    adapter, log = train_adapter(config, encoder, backbone,
                                 dataset=dataset, corpus=corpus)

    summary = summarize_log(log)
    print(f"  initial loss (first {summary['window']} steps)  {summary['initial_window_mean']:.4f}")
    print(f"  final loss   (last  {summary['window']} steps)  {summary['final_window_mean']:.4f}")
    print(f"  ratio                                 {summary['ratio']:.3f}")
    print("  frozen backbone+encoder intact: True")

    first, last = log[0], log[-1]
    print("\nlearned encoder-layer mix (softmax weights):")
    print(f"  step {first.step:5d}: {[round(w, 3) for w in first.mix_weights]}")
    print(f"  step {last.step:5d}: {[round(w, 3) for w in last.mix_weights]}")
    if args.out:
        print(f"\ncheckpoint and train_log.jsonl written under {args.out}")


if __name__ == "__main__":
    main()
