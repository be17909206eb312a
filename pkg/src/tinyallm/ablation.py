"""Three-arm data-composition study over shared clips, model, and trainer.

Each arm differs ONLY in its dataset manifest: positive-only, separate
positive+negative, or combined responses, all built from the same pool at
equal effective size 2N.  Every (arm, seed) run shares the arm-agnostic
adapter init and batch schedule for that seed, so metric differences
trace back to data composition alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backbone as bb
from . import encoder as enc
from .adapter import AdapterConfig, init_adapter
from .audio_world import CorpusManifest
from .datagen import RuleGenerator, build_ablation_splits
from .evalharness import run_full_eval
from .pipeline import AllmEndpoint
from .rng import Stream
from .trainer import TrainConfig, summarize_log, train_adapter

__all__ = [
    "ABLATION_ARMS",
    "METRIC_COLUMNS",
    "AblationConfig",
    "run_ablation",
    "emit_plots",
]

ABLATION_ARMS = ("pos_only", "pos_neg", "combined")

# fixed report column order
METRIC_COLUMNS = ("acc", "f1_yes", "f1_no", "f1_weighted", "yes_rate", "aqa_acc", "synhyp_acc")


@dataclass
class AblationConfig:
    n_per_arm: int = 100
    seeds: tuple[int, ...] = (0, 1, 2)
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-3
    data_seed: int = 0
    eval_seed: int = 0
    max_new_tokens: int = 8
    out_dir: str | Path | None = None

    def to_json(self) -> dict:
        return {
            "n_per_arm": self.n_per_arm,
            "seeds": list(self.seeds),
            "steps": self.steps,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "data_seed": self.data_seed,
            "eval_seed": self.eval_seed,
            "max_new_tokens": self.max_new_tokens,
        }


@dataclass
class _RunOutcome:
    arm: str
    seed: int
    metrics: dict | None = None
    train_summary: dict | None = None
    log: list = field(default_factory=list)
    error: str | None = None


def _median_row(rows: list[dict]) -> dict:
    out = {}
    for col in METRIC_COLUMNS:
        vals = [r[col] for r in rows if r.get(col) is not None]
        out[col] = round(float(np.median(vals)), 6) if vals else None
    return out


def run_ablation(
    corpus: CorpusManifest,
    backbone_params: bb.BackboneParams,
    encoder_params: enc.EncoderParams,
    config: AblationConfig | None = None,
    generator=None,
) -> dict:
    """Train and evaluate all arms x seeds; failures mark rows, not the run."""
    config = config or AblationConfig()
    generator = generator or RuleGenerator()
    pool = [c for c in corpus.clips if c.split == "train"]
    splits = build_ablation_splits(
        pool, config.n_per_arm, corpus.ontology, generator, Stream(config.data_seed).derive("ablation")
    )
    out_dir = Path(config.out_dir) if config.out_dir else None

    outcomes: list[_RunOutcome] = []
    for seed in config.seeds:
        for arm in ABLATION_ARMS:
            outcome = _RunOutcome(arm=arm, seed=seed)
            try:
                train_cfg = TrainConfig(
                    steps=config.steps,
                    batch_size=config.batch_size,
                    learning_rate=config.learning_rate,
                    seed=seed,
                    checkpoint_every=0,
                )
                adapter_init = init_adapter(
                    AdapterConfig(d_llm=backbone_params.config.d_llm), seed=seed
                )
                adapter, log = train_adapter(
                    train_cfg,
                    encoder_params,
                    backbone_params,
                    adapter_init=adapter_init,
                    dataset=splits[arm],
                    corpus=corpus,
                )
                outcome.log = log
                outcome.train_summary = summarize_log(log) if log else None
                endpoint = AllmEndpoint(
                    encoder_params=encoder_params,
                    adapter_params=adapter,
                    backbone_params=backbone_params,
                )
                report, _ = run_full_eval(
                    endpoint, corpus, seed=config.eval_seed, max_new_tokens=config.max_new_tokens
                )
                outcome.metrics = {col: report.get(col) for col in METRIC_COLUMNS}
            except Exception as e:  # noqa: BLE001 - stage failure becomes a marked row
                outcome.error = f"{type(e).__name__}: {e}"
            outcomes.append(outcome)

    rows = []
    for o in outcomes:
        row = {"arm": o.arm, "seed": o.seed, "failed": o.error is not None}
        if o.metrics:
            row.update(o.metrics)
        if o.error:
            row["error"] = o.error
        if o.train_summary:
            row["train"] = o.train_summary
        rows.append(row)

    medians = {
        arm: _median_row([r for r in rows if r["arm"] == arm and not r["failed"]])
        for arm in ABLATION_ARMS
    }
    report = {
        "version": "ablation-v1",
        "config": config.to_json(),
        "columns": list(METRIC_COLUMNS),
        "rows": rows,
        "medians": medians,
        "failures": [f"{o.arm}/seed{o.seed}: {o.error}" for o in outcomes if o.error],
        "dataset_names": {arm: splits[arm].name for arm in ABLATION_ARMS},
        "effective_counts": {arm: splits[arm].effective_count for arm in ABLATION_ARMS},
    }
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "ablation_report.json").write_text(
            json.dumps(report, indent=1, sort_keys=True) + "\n", "utf-8"
        )
        for arm in ABLATION_ARMS:
            splits[arm].save_jsonl(out_dir / f"dataset_{arm}.jsonl")
        logs = {
            f"{o.arm}-seed{o.seed}": [r.to_json() for r in o.log] for o in outcomes if o.log
        }
        (out_dir / "train_logs.json").write_text(json.dumps(logs, indent=0) + "\n", "utf-8")
    return report


def emit_plots(report: dict, out_dir: str | Path, train_logs: dict | None = None) -> dict:
    """Bar charts for F1(no)/yes-rate medians and per-run loss curves.

    Missing report fields are listed in the returned notes, never fatal.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    notes: list[str] = []
    written: list[str] = []

    def bar_chart(metric: str, filename: str) -> None:
        medians = report.get("medians") or {}
        arms = [a for a in ABLATION_ARMS if a in medians and medians[a].get(metric) is not None]
        if not arms:
            notes.append(f"no median {metric} values; {filename} skipped")
            return
        fig, ax = plt.subplots(figsize=(5, 3.2), dpi=120)
        values = [medians[a][metric] for a in arms]  # already percent-scale
        ax.bar(arms, values, color=["#888888", "#3a6ea5", "#a53a3a"][: len(arms)])
        ax.set_ylabel(f"{metric} (%)")
        ax.set_title(f"median {metric} by data configuration")
        for i, v in enumerate(values):
            ax.text(i, v, f"{v:.1f}", ha="center", va="bottom", fontsize=8)
        fig.tight_layout()
        fig.savefig(out_dir / filename)
        plt.close(fig)
        written.append(filename)

    bar_chart("f1_no", "f1n_bar.png")
    bar_chart("yes_rate", "yesrate_bar.png")

    if train_logs:
        any_curve = False
        fig, ax = plt.subplots(figsize=(6, 3.6), dpi=120)
        for name in sorted(train_logs):
            records = train_logs[name]
            if not records:
                notes.append(f"empty training log for {name}; curve skipped")
                continue
            ax.plot([r["step"] for r in records], [r["loss"] for r in records], label=name, lw=0.8)
            any_curve = True
        if any_curve:
            ax.set_xlabel("step")
            ax.set_ylabel("masked NLL")
            ax.legend(fontsize=6)
            fig.tight_layout()
            fig.savefig(out_dir / "loss_curves.png")
            written.append("loss_curves.png")
        else:
            notes.append("no non-empty training logs; loss_curves.png skipped")
        plt.close(fig)
    else:
        notes.append("no training logs provided; loss_curves.png skipped")
    return {"written": written, "notes": notes}
