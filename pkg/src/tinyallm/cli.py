"""Command-line entry point binding every pipeline stage.

Settings resolve in three layers: subcommand defaults, then a flat JSON
config file with dotted keys ("train.steps"), then explicit flags.  Every
stage that writes an output directory drops a run record there with the
resolved settings and the digests of each input artifact.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .audio_world import CorpusConfig, CorpusManifest, build_corpus, load_default_ontology
from .checkpoint import file_digest
from .datagen import (
    DatasetManifest,
    LmGenerator,
    RuleGenerator,
    build_ablation_splits,
    build_dataset,
)
from .errors import ConfigurationError, DataError, GenerationError, NumericalError
from .rng import Stream

__all__ = ["main", "build_parser"]

_KIND_NAMES = {"pos": "positive", "neg": "negative", "comb": "combined"}


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        payload = json.loads(Path(path).read_text("utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file is not valid JSON: {e}")
    if not isinstance(payload, dict):
        raise ConfigurationError("config file must hold a JSON object with dotted keys")
    return payload


def _resolve(args: argparse.Namespace, key: str, default):
    """Flag if given, else config-file value under 'subcommand.key', else default."""
    flag = getattr(args, key.replace("-", "_"), None)
    if flag is not None:
        return flag
    return args.config_values.get(f"{args.subcommand}.{key}", default)


def _record(out_dir: Path, subcommand: str, settings: dict, inputs: dict[str, str]) -> None:
    from .pipeline import save_run_record

    digests = {}
    for name, path in inputs.items():
        p = Path(path)
        if p.is_dir():
            digests[name] = {f.name: file_digest(f) for f in sorted(p.iterdir()) if f.is_file()}
        elif p.exists():
            digests[name] = file_digest(p)
    save_run_record(out_dir, {"subcommand": subcommand, "settings": settings, "inputs": digests})


# ---------------------------------------------------------------------------
# Handlers
# ---------------------------------------------------------------------------


def _cmd_synth_audio(args) -> int:
    settings = {
        "n_train": int(_resolve(args, "n-train", 200)),
        "n_eval": int(_resolve(args, "n-eval", 50)),
        "ontology_size": int(_resolve(args, "ontology-size", 8)),
        "seed": int(_resolve(args, "seed", 0)),
        "snr_db": float(_resolve(args, "snr-db", 20.0)),
    }
    manifest = build_corpus(CorpusConfig(**settings))
    out = Path(_require(args, "out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest.save(out)
    _record(out.parent, "synth-audio", settings, {})
    print(f"wrote corpus manifest with {len(manifest.clips)} clips to {out}")
    return 0


def _make_generator(name: str, args):
    if name == "rule":
        return RuleGenerator()
    if name == "toylm":
        from .backbone import BackboneClient, load_backbone

        backbone_dir = _require(args, "backbone")
        return LmGenerator(BackboneClient(load_backbone(backbone_dir)))
    if name == "external":
        from .datagen import ExternalClient

        endpoint = _resolve(args, "endpoint", None)
        if not endpoint:
            raise ConfigurationError("--endpoint required for the external generator")
        return LmGenerator(ExternalClient(endpoint))
    raise ConfigurationError(f"unknown generator {name!r}")


def _cmd_synth_data(args) -> int:
    corpus = CorpusManifest.load(_require(args, "corpus"))
    kind = _resolve(args, "kind", None)
    if kind not in ("pos", "neg", "comb", "ablation"):
        raise ConfigurationError("--kind must be one of pos|neg|comb|ablation")
    n = int(_resolve(args, "n", 100))
    seed = int(_resolve(args, "seed", 0))
    generator = _make_generator(_resolve(args, "generator", "rule"), args)
    pool = [c for c in corpus.clips if c.split == "train"]
    out = Path(_require(args, "out"))
    settings = {"kind": kind, "n": n, "seed": seed, "generator": generator.generator_id}

    if kind == "ablation":
        splits = build_ablation_splits(
            pool, n, corpus.ontology, generator, Stream(seed).derive("ablation")
        )
        out.mkdir(parents=True, exist_ok=True)
        for arm, manifest in splits.items():
            manifest.save_jsonl(out / f"dataset_{arm}.jsonl")
        _record(out, "synth-data", settings, {"corpus": _require(args, "corpus")})
        counts = {arm: m.effective_count for arm, m in splits.items()}
        print(f"wrote three ablation manifests to {out} (effective counts {counts})")
    else:
        manifest = build_dataset(
            pool, corpus.ontology, _KIND_NAMES[kind], n, generator, Stream(seed).derive("dataset")
        )
        out.parent.mkdir(parents=True, exist_ok=True)
        manifest.save_jsonl(out)
        _record(out.parent, "synth-data", settings, {"corpus": _require(args, "corpus")})
        print(f"wrote {len(manifest.samples)} samples (effective {manifest.effective_count}) to {out}")
    return 0


def _cmd_pretrain_lm(args) -> int:
    from .backbone import PretrainConfig, pretrain_toy_lm, save_backbone
    from .pipeline import build_pretrain_corpus

    settings = {
        "n_lines": int(_resolve(args, "n-lines", 60000)),
        "seed": int(_resolve(args, "seed", 0)),
        "steps": int(_resolve(args, "steps", 9000)),
    }
    out_dir = Path(_require(args, "out-dir"))
    ontology = load_default_ontology()
    lines = build_pretrain_corpus(ontology, n_lines=settings["n_lines"], seed=settings["seed"])
    params, report = pretrain_toy_lm(
        lines, PretrainConfig(steps=settings["steps"], seed=settings["seed"])
    )
    save_backbone(out_dir, params)
    (out_dir / "pretrain_report.json").write_text(json.dumps(report, indent=1, sort_keys=True), "utf-8")
    _record(out_dir, "pretrain-lm", settings, {})
    print(
        f"pretrained backbone (held-out perplexity {report['held_out_perplexity']:.3f}) saved to {out_dir}"
    )
    return 0


def _cmd_train(args) -> int:
    from .backbone import load_backbone
    from .encoder import init_encoder
    from .trainer import TrainConfig, train_adapter

    data = _require(args, "data")
    corpus_path = _require(args, "corpus")
    backbone_dir = _require(args, "backbone")
    out_dir = Path(_require(args, "out-dir"))
    cfg = TrainConfig(
        data=data,
        corpus=corpus_path,
        steps=int(_resolve(args, "steps", 2000)),
        batch_size=int(_resolve(args, "batch-size", 8)),
        learning_rate=float(_resolve(args, "learning-rate", 1e-3)),
        seed=int(_resolve(args, "seed", 0)),
        deterministic=bool(_resolve(args, "deterministic", True)),
        out_dir=out_dir,
    )
    backbone = load_backbone(backbone_dir)
    encoder_params = init_encoder(seed=int(_resolve(args, "encoder-seed", 0)))
    _, log = train_adapter(cfg, encoder_params, backbone)
    _record(out_dir, "train", cfg.to_json(), {"data": data, "corpus": corpus_path, "backbone": backbone_dir})
    print(f"trained adapter for {len(log)} steps; final loss {log[-1].loss:.4f}" if log else "0 steps")
    return 0


def _cmd_eval(args) -> int:
    from .evalharness import run_full_eval
    from .pipeline import load_endpoint

    corpus = CorpusManifest.load(_require(args, "corpus"))
    checkpoint = _require(args, "checkpoint")
    backbone_dir = _require(args, "backbone")
    probe = _resolve(args, "probe", "all")
    if probe not in ("halluc", "synhyp", "aqa", "all"):
        raise ConfigurationError("--probe must be one of halluc|synhyp|aqa|all")
    probes = ("halluc", "synhyp", "aqa") if probe == "all" else (probe,)
    out = Path(_resolve(args, "out", "report.json"))
    endpoint = load_endpoint(backbone_dir, checkpoint, encoder_seed=int(_resolve(args, "encoder-seed", 0)))
    report, predictions = run_full_eval(
        endpoint,
        corpus,
        seed=int(_resolve(args, "seed", 0)),
        max_new_tokens=int(_resolve(args, "max-new-tokens", 24)),
        probes=probes,
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", "utf-8")
    with open(out.with_suffix(".predictions.jsonl"), "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(json.dumps(p.to_json(), sort_keys=True) + "\n")
    _record(
        out.parent,
        "eval",
        {"probe": probe, "seed": int(_resolve(args, "seed", 0))},
        {"corpus": _require(args, "corpus"), "checkpoint": checkpoint, "backbone": backbone_dir},
    )
    print(json.dumps(report, indent=1, sort_keys=True))
    return 0


def _cmd_ablate(args) -> int:
    from .ablation import ABLATION_ARMS, METRIC_COLUMNS, AblationConfig, run_ablation
    from .backbone import load_backbone
    from .encoder import init_encoder

    corpus = CorpusManifest.load(_require(args, "corpus"))
    backbone = load_backbone(_require(args, "backbone"))
    out_dir = Path(_require(args, "out-dir"))
    n_seeds = int(_resolve(args, "seeds", 3))
    cfg = AblationConfig(
        n_per_arm=int(_resolve(args, "n", 100)),
        seeds=tuple(range(n_seeds)),
        steps=int(_resolve(args, "steps", 2000)),
        batch_size=int(_resolve(args, "batch-size", 8)),
        eval_seed=int(_resolve(args, "eval-seed", 0)),
        out_dir=out_dir,
    )
    report = run_ablation(corpus, backbone, init_encoder(seed=0), cfg)
    _record(out_dir, "ablate", cfg.to_json(), {"corpus": _require(args, "corpus"), "backbone": _require(args, "backbone")})
    def pct(value) -> str:
        # eval reports carry percent-scale values already
        return "-" if value is None else f"{value:.1f}"

    header = ["arm/seed"] + list(METRIC_COLUMNS)
    print("  ".join(f"{h:>11}" for h in header))
    for row in report["rows"]:
        label = f"{row['arm']}/{row['seed']}"
        cells = [label] + [
            ("FAILED" if row["failed"] else pct(row.get(c))) for c in METRIC_COLUMNS
        ]
        print("  ".join(f"{c:>11}" for c in cells))
    for arm in ABLATION_ARMS:
        med = report["medians"][arm]
        cells = [f"{arm}/med"] + [pct(med.get(c)) for c in METRIC_COLUMNS]
        print("  ".join(f"{c:>11}" for c in cells))
    if report["failures"]:
        print("failures:", "; ".join(report["failures"]))
    return 0


def _cmd_plot(args) -> int:
    from .ablation import emit_plots

    report_path = Path(_require(args, "report"))
    try:
        report = json.loads(report_path.read_text("utf-8"))
    except FileNotFoundError:
        raise DataError(f"report not found: {report_path}")
    logs_path = report_path.parent / "train_logs.json"
    train_logs = json.loads(logs_path.read_text("utf-8")) if logs_path.exists() else None
    out_dir = Path(_resolve(args, "out-dir", report_path.parent))
    result = emit_plots(report, out_dir, train_logs)
    print(f"wrote {result['written']} to {out_dir}")
    for note in result["notes"]:
        print("note:", note)
    return 0


def _require(args, key: str):
    value = _resolve(args, key, None)
    if value is None:
        raise ConfigurationError(f"--{key} is required for {args.subcommand}")
    return value


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tinyallm",
        description="Synthetic audio corpus, contrastive-like data synthesis, "
        "adapter training, and hallucination evaluation.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name: str, help_text: str, flags: list[tuple[str, dict]]):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat JSON config file with dotted keys")
        for flag, kw in flags:
            p.add_argument(flag, **kw)
        return p

    p = add(
        "synth-audio",
        "generate a deterministic synthetic clip corpus manifest",
        [
            ("--n-train", {"type": int, "help": "train clips (default 200)"}),
            ("--n-eval", {"type": int, "help": "eval clips (default 50)"}),
            ("--ontology-size", {"type": int, "help": "event classes to use (default 8)"}),
            ("--seed", {"type": int, "help": "corpus seed (default 0)"}),
            ("--snr-db", {"type": float, "help": "event-to-noise ratio (default 20)"}),
            ("--out", {"help": "output manifest JSON path"}),
        ],
    )
    p.set_defaults(func=_cmd_synth_audio)

    p = add(
        "synth-data",
        "synthesize present/absent training samples from a corpus",
        [
            ("--corpus", {"help": "corpus manifest JSON"}),
            ("--kind", {"help": "pos|neg|comb|ablation"}),
            ("--n", {"type": int, "help": "sample count, or N per ablation arm (default 100)"}),
            ("--generator", {"help": "rule|toylm|external (default rule)"}),
            ("--backbone", {"help": "backbone artifact dir (toylm generator)"}),
            ("--endpoint", {"help": "HTTP endpoint (external generator)"}),
            ("--seed", {"type": int, "help": "sampling seed (default 0)"}),
            ("--out", {"help": "output JSONL path, or directory for ablation"}),
        ],
    )
    p.set_defaults(func=_cmd_synth_data)

    p = add(
        "pretrain-lm",
        "pretrain and freeze the template-corpus backbone",
        [
            ("--n-lines", {"type": int, "help": "corpus lines (default 60000)"}),
            ("--seed", {"type": int, "help": "pretraining seed (default 0)"}),
            ("--steps", {"type": int, "help": "optimizer steps (default 9000)"}),
            ("--out-dir", {"help": "artifact output directory"}),
        ],
    )
    p.set_defaults(func=_cmd_pretrain_lm)

    p = add(
        "train",
        "train the audio adapter against frozen encoder and backbone",
        [
            ("--data", {"help": "dataset manifest JSONL"}),
            ("--corpus", {"help": "corpus manifest JSON"}),
            ("--backbone", {"help": "backbone artifact dir"}),
            ("--steps", {"type": int, "help": "optimizer steps (default 2000)"}),
            ("--batch-size", {"type": int, "help": "batch size (default 8)"}),
            ("--learning-rate", {"type": float, "help": "Adam learning rate (default 1e-3)"}),
            ("--seed", {"type": int, "help": "training seed (default 0)"}),
            (
                "--deterministic",
                {
                    "action": argparse.BooleanOptionalAction,
                    "default": None,
                    "help": "single-threaded bit-reproducible mode (default on)",
                },
            ),
            ("--encoder-seed", {"type": int, "help": "frozen encoder seed (default 0)"}),
            ("--out-dir", {"help": "checkpoint/log output directory"}),
        ],
    )
    p.set_defaults(func=_cmd_train)

    p = add(
        "eval",
        "run probes against a trained adapter and report metrics",
        [
            ("--corpus", {"help": "corpus manifest JSON"}),
            ("--checkpoint", {"help": "adapter checkpoint file"}),
            ("--backbone", {"help": "backbone artifact dir"}),
            ("--probe", {"help": "halluc|synhyp|aqa|all (default all)"}),
            ("--seed", {"type": int, "help": "probe sampling seed (default 0)"}),
            ("--max-new-tokens", {"type": int, "help": "decode budget per answer (default 24)"}),
            ("--encoder-seed", {"type": int, "help": "frozen encoder seed (default 0)"}),
            ("--out", {"help": "report JSON path (default report.json)"}),
        ],
    )
    p.set_defaults(func=_cmd_eval)

    p = add(
        "ablate",
        "run the three-arm data-composition study",
        [
            ("--corpus", {"help": "corpus manifest JSON"}),
            ("--backbone", {"help": "backbone artifact dir"}),
            ("--n", {"type": int, "help": "N per arm; effective size 2N (default 100)"}),
            ("--seeds", {"type": int, "help": "number of seeds (default 3)"}),
            ("--steps", {"type": int, "help": "train steps per run (default 2000)"}),
            ("--batch-size", {"type": int, "help": "batch size (default 8)"}),
            ("--eval-seed", {"type": int, "help": "probe seed shared by all runs (default 0)"}),
            ("--out-dir", {"help": "report/plot output directory"}),
        ],
    )
    p.set_defaults(func=_cmd_ablate)

    p = add(
        "plot",
        "render bar charts and loss curves from an ablation report",
        [
            ("--report", {"help": "ablation_report.json path"}),
            ("--out-dir", {"help": "image output directory (default: report dir)"}),
        ],
    )
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.config_values = _load_config(getattr(args, "config", None))
        return args.func(args)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except (DataError, GenerationError, KeyError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
