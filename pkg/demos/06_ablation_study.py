"""Run the three-arm data ablation end to end and plot the comparison.

Arms: positive-only (2N), positive+negative (N+N), combined (N double-duty
samples) -- equal effective budget.  Defaults are shrunk so the demo
finishes in a few minutes; the reference study uses --n 100 --steps 2000
and three seeds.

Run:  python3 demos/06_ablation_study.py --backbone /tmp/allm_demo/backbone \
          [--n 12] [--steps 300] [--out /tmp/allm_demo/ablation]
"""

from __future__ import annotations

import argparse

from tinyallm.ablation import AblationConfig, emit_plots, run_ablation
from tinyallm.audio_world import CorpusConfig, build_corpus
from tinyallm.backbone import load_backbone
from tinyallm.encoder import init_encoder


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--backbone", required=True)
    parser.add_argument("--n", type=int, default=12)
    parser.add_argument("--steps", type=int, default=300)
    parser.add_argument("--seeds", type=int, default=2)
    parser.add_argument("--out", default="/tmp/allm_demo/ablation")
    args = parser.parse_args()

    corpus = build_corpus(CorpusConfig(n_train=60, n_eval=12, ontology_size=8, seed=0))
    backbone = load_backbone(args.backbone)
    encoder = init_encoder(seed=0)
    config = AblationConfig(
        n_per_arm=args.n, steps=args.steps, seeds=tuple(range(args.seeds)),
        out_dir=args.out,
    )

    report = run_ablation(corpus, backbone, encoder, config)
    cols = ("f1_no", "yes_rate", "acc")
    print(f"{'arm':10} {'seed':>4} " + " ".join(f"{c:>9}" for c in cols))
    for row in report["rows"]:
        if row.get("error"):
            print(f"{row['arm']:10} {row['seed']:>4} failed: {row['error']}")
            continue
        vals = " ".join(f"{row[c] * 100:8.2f}%" for c in cols)
        print(f"{row['arm']:10} {row['seed']:>4} {vals}")
    print("medians:")
    for arm, med in report["medians"].items():
        vals = " ".join(
            f"{med[c] * 100:8.2f}%" if med.get(c) is not None else f"{'--':>9}" for c in cols
        )
        print(f"{arm:10} {'med':>4} {vals}")

    result = emit_plots(report, args.out)
    print(f"\nplots written: {result['written']}")
    if result["notes"]:
        print(f"notes: {result['notes']}")


if __name__ == "__main__":
    main()
