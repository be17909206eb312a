"""Score a trained adapter on the hallucination / relation / AQA probes.

Expects a backbone artifact and an adapter checkpoint (demos 03-04 or the
`pretrain-lm` / `train` subcommands).

Run:  python3 demos/05_evaluate.py --backbone /tmp/allm_demo/backbone \
          --checkpoint /tmp/allm_demo/run/adapter.ckpt
"""

from __future__ import annotations

import argparse
import json

from tinyallm.audio_world import CorpusConfig, build_corpus
from tinyallm.evalharness import run_full_eval
from tinyallm.pipeline import load_endpoint


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--backbone", required=True)
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--eval-clips", type=int, default=12)
    args = parser.parse_args()

    corpus = build_corpus(
        CorpusConfig(n_train=50, n_eval=args.eval_clips, ontology_size=8, seed=args.seed)
    )
    endpoint = load_endpoint(args.backbone, args.checkpoint)

    report, predictions = run_full_eval(endpoint, corpus, seed=args.seed)
    print("metrics (percent):")
    print(json.dumps(report.as_percentages(), indent=2, sort_keys=True))

    print("\nfirst few presence-probe transcripts:")
    shown = 0
    for pred in predictions:
        if pred.item.probe_kind != "halluc" or shown >= 4:
            continue
        mark = "ok " if pred.extracted == pred.item.gold else "BAD"
        print(f"  [{mark}] {pred.item.question}")
        print(f"        gold {pred.item.gold:>3} | raw {pred.raw_text!r} "
              f"| extracted {pred.extracted}")
        shown += 1


if __name__ == "__main__":
    main()
