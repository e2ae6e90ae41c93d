"""Pipeline orchestration and command-line entry points.

Subcommands: synth, build-stream, tokenizer-train, train, predict, eval,
experiment. Outputs land under --out; the experiment command writes one
directory per preset and seed plus summary.md / summary.json.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import corpus, labeling, stream as stream_mod, synth, tokenizer as tok_mod
from .corpus import CorpusError, EntryAnnotation, LineRecord
from .labeling import (
    DEFAULT_ENTITY_KINDS,
    LabeledStream,
    LabelScheme,
    LabelingError,
    decode_entity_triples,
    decode_entry_spans,
)
from .metrics import EvalReport, MetricsError, aggregate_runs, boundary_metrics, ner_metrics
from .model import Checkpoint, ModelConfig, ModelError, TrainHyper, init_model, predict, train
from .stream import ConfigError, ExperimentConfig, PRESETS, StreamError, get_preset
from .tokenizer import SubwordVocab, TokenizerError

VALIDATION_ERRORS = (
    CorpusError, ConfigError, StreamError, LabelingError,
    MetricsError, ModelError, TokenizerError, ValueError,
)

DEFAULT_SPLIT_SEED = 0
DEFAULT_VOCAB_SIZE = 500


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """What went into a run and what came out, with content hashes."""

    preset: str
    config: dict
    seeds: list[int]
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    started: float = 0.0
    duration_s: float = 0.0

    def add_input(self, path: Path) -> None:
        self.inputs[str(path)] = _sha256(path)

    def add_output(self, path: Path) -> None:
        self.outputs[str(path)] = _sha256(path)

    def save(self, path: Path) -> None:
        obj = {
            "preset": self.preset,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "started": self.started,
            "duration_s": self.duration_s,
        }
        path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def save_clean_texts(texts: Sequence[str], path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for i, text in enumerate(texts):
            fh.write(json.dumps({"line": i, "text": text}, ensure_ascii=False) + "\n")


def load_clean_texts(path: Path) -> list[str]:
    rows = {}
    with path.open("r", encoding="utf-8") as fh:
        for raw in fh:
            if raw.strip():
                obj = json.loads(raw)
                rows[obj["line"]] = obj["text"]
    return [rows[i] for i in range(len(rows))]


@dataclass
class SplitData:
    """One split's lines with remapped entries and the matching clean texts."""

    lines: list[LineRecord]
    entries: list[EntryAnnotation]
    clean_texts: list[str] | None


def split_corpus(
    lines: Sequence[LineRecord],
    entries: Sequence[EntryAnnotation],
    clean_texts: Sequence[str] | None,
    split_seed: int = DEFAULT_SPLIT_SEED,
    ratios: tuple[float, float, float] = (0.80, 0.15, 0.05),
) -> dict[str, SplitData]:
    pages = {line.page_id for line in lines}
    split = corpus.split_dataset(pages, ratios=ratios, seed=split_seed)
    out = {}
    for name, page_set in (
        ("train", split.train), ("test", split.test), ("validation", split.validation)
    ):
        sub_lines, sub_entries, kept = corpus.select_pages(lines, entries, page_set)
        sub_clean = [clean_texts[g] for g in kept] if clean_texts is not None else None
        out[name] = SplitData(lines=sub_lines, entries=sub_entries, clean_texts=sub_clean)
    return out


def build_vocab(
    train_lines: Sequence[LineRecord],
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    mode: str = "bpe",
) -> SubwordVocab:
    """Subword vocabulary over the training text plus every special marker.

    All presets share one marker superset so a single vocabulary (and its
    fingerprint) serves the whole experiment matrix.
    """
    base = tok_mod.train_tokenizer((l.text for l in train_lines), vocab_size, mode=mode)
    return tok_mod.register_specials(base, stream_mod.ALL_MARKERS)


def make_scheme(config: ExperimentConfig, entity_kinds=DEFAULT_ENTITY_KINDS) -> LabelScheme:
    return LabelScheme(
        policy=config.boundary_policy,
        entity_kinds=tuple(entity_kinds) if config.ner else (),
    )


def build_labeled(
    data: SplitData, config: ExperimentConfig, vocab: SubwordVocab, scheme: LabelScheme
) -> LabeledStream:
    token_stream = stream_mod.build_stream(data.lines, config)
    encoded = tok_mod.encode(vocab, token_stream)
    return labeling.project_labels(
        encoded, data.entries, scheme, clean_line_texts=data.clean_texts
    )


def evaluate_predictions(pred_ids: Sequence[int], gold: LabeledStream) -> EvalReport:
    """Exact-match boundary (and entity) scores of predicted label ids."""
    scheme = gold.scheme
    pred_marks = labeling.boundary_marks_of(pred_ids, scheme)
    boundary = boundary_metrics(pred_marks, gold.boundary_marks())
    entities: dict = {}
    micro = None
    if scheme.entity_kinds:
        entities, micro = ner_metrics(
            decode_entity_triples(pred_ids, scheme),
            decode_entity_triples(gold.label_ids, scheme),
        )
    _, malformed = decode_entry_spans(pred_ids, scheme)
    counters = dict(gold.counters)
    counters["malformed_pred_entries"] = malformed
    return EvalReport(boundary=boundary, entities=entities, ner_micro=micro, counters=counters)


def run_experiment(
    preset: str,
    config: ExperimentConfig,
    splits: dict[str, SplitData],
    seeds: Sequence[int],
    out_dir: Path,
    vocab: SubwordVocab,
    model_overrides: dict | None = None,
    hyper: TrainHyper | None = None,
) -> tuple[EvalReport, RunManifest]:
    """Train one model per seed, evaluate on the test split, aggregate."""
    config.validate()
    hyper = hyper or TrainHyper()
    started = time.time()
    manifest = RunManifest(
        preset=preset, config=config.to_dict(), seeds=list(seeds), started=started
    )
    out_dir.mkdir(parents=True, exist_ok=True)

    scheme = make_scheme(config)
    labeled = {name: build_labeled(data, config, vocab, scheme) for name, data in splits.items()}

    model_config = make_model_config(vocab, scheme, model_overrides)
    reports = []
    for seed in seeds:
        seed_dir = out_dir / str(seed)
        seed_dir.mkdir(parents=True, exist_ok=True)
        model = init_model(model_config, seed)
        checkpoint = train(
            model, [labeled["train"]], [labeled["validation"]], hyper, seed
        )
        checkpoint_path = seed_dir / "checkpoint.npz"
        checkpoint.save(checkpoint_path)
        manifest.add_output(checkpoint_path)

        pred_ids = predict(checkpoint, labeled["test"].encoded)
        report = evaluate_predictions(pred_ids, labeled["test"])
        report_path = seed_dir / "report.json"
        report_path.write_text(report.to_json() + "\n", encoding="utf-8")
        manifest.add_output(report_path)
        reports.append(report)

    aggregate = aggregate_runs(reports)
    aggregate_path = out_dir / "report.json"
    aggregate_path.write_text(aggregate.to_json() + "\n", encoding="utf-8")
    manifest.add_output(aggregate_path)
    manifest.duration_s = time.time() - started
    manifest.save(out_dir / "manifest.json")
    return aggregate, manifest


def _preset_flags(config: ExperimentConfig) -> dict[str, str]:
    return {
        "text": "yes" if config.use_text else "no",
        "ner": "yes" if config.ner else "no",
        "breaks": "yes" if config.use_breaks else "no",
        "left": {"none": "no", "absolute": "abs.", "relative": "rel."}[config.left_mode],
        "right": {"none": "no", "absolute": "abs."}[config.right_mode],
    }


def write_summary(results: dict[str, EvalReport], out_dir: Path) -> None:
    """summary.md / summary.json with one row per preset, ascending macro F."""
    ordered = sorted(results.items(), key=lambda kv: kv[1].macro_boundary_f)
    rows = []
    for name, report in ordered:
        flags = _preset_flags(PRESETS[name]) if name in PRESETS else {}
        rows.append(
            {
                "experiment": name,
                **flags,
                "precision": round(100 * report.macro_boundary_precision, 1),
                "recall": round(100 * report.macro_boundary_recall, 1),
                "f_score": round(100 * report.macro_boundary_f, 1),
                "ner_f": (
                    round(100 * report.ner_micro.f, 1) if report.ner_micro else None
                ),
            }
        )
    (out_dir / "summary.json").write_text(
        json.dumps(rows, indent=2) + "\n", encoding="utf-8"
    )
    header = ["experiment", "text", "ner", "breaks", "left", "right",
              "precision", "recall", "f_score", "ner_f"]
    lines = ["| " + " | ".join(header) + " |",
             "|" + "---|" * len(header)]
    for row in rows:
        lines.append(
            "| " + " | ".join(
                "-" if row.get(col) is None else str(row.get(col, "-")) for col in header
            ) + " |"
        )
    (out_dir / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_data_dir(data_dir: Path) -> tuple[list[LineRecord], list[EntryAnnotation], list[str] | None]:
    lines = corpus.load_lines(data_dir / "lines.jsonl")
    annotations = corpus.load_annotations(data_dir / "annotations.jsonl", lines=None)
    clean_path = data_dir / "clean.jsonl"
    clean = load_clean_texts(clean_path) if clean_path.exists() else None
    return lines, annotations, clean


def _config_from_args(args) -> tuple[str, ExperimentConfig]:
    if getattr(args, "config", None):
        return Path(args.config).stem, stream_mod.load_config(args.config)
    return args.preset, get_preset(args.preset)


def _hyper_from_path(path: str | None) -> TrainHyper:
    if not path:
        return TrainHyper()
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if "seeds" in obj:
        obj["seeds"] = tuple(obj["seeds"])
    return TrainHyper(**obj)


def _model_overrides(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def make_model_config(vocab: SubwordVocab, scheme: LabelScheme, overrides: dict | None) -> ModelConfig:
    overrides = dict(overrides or {})
    for key in ("vocab_size", "n_labels"):  # derived from the data, not configurable
        overrides.pop(key, None)
    return ModelConfig(vocab_size=len(vocab), n_labels=len(scheme), **overrides)


def cmd_synth(args) -> int:
    params = synth.SynthParams()
    if args.params:
        obj = json.loads(Path(args.params).read_text(encoding="utf-8"))
        for key in ("surnames", "activities", "titles", "streets"):
            if key in obj:
                obj[key] = tuple(obj[key])
        params = synth.SynthParams(**obj)
    generated = synth.generate_corpus(params, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus.save_lines(generated.lines, out / "lines.jsonl")
    corpus.save_annotations(generated.annotations, out / "annotations.jsonl")
    save_clean_texts(generated.clean_texts, out / "clean.jsonl")
    print(f"wrote {len(generated.lines)} lines, {len(generated.annotations)} entries to {out}")
    return 0


def cmd_build_stream(args) -> int:
    _, config = _config_from_args(args)
    lines = corpus.load_lines(args.lines)
    token_stream = stream_mod.build_stream(lines, config)
    stream_mod.save_stream(token_stream, args.out)
    print(f"wrote {len(token_stream)} stream tokens to {args.out}")
    return 0


def cmd_tokenizer_train(args) -> int:
    lines = corpus.load_lines(args.lines)
    vocab = build_vocab(lines, vocab_size=args.vocab_size, mode=args.mode)
    vocab.save(args.out)
    print(f"wrote vocabulary of {len(vocab)} tokens to {args.out}")
    return 0


def cmd_train(args) -> int:
    name, config = _config_from_args(args)
    lines, annotations, clean = load_data_dir(Path(args.data))
    splits = split_corpus(lines, annotations, clean, split_seed=args.split_seed)
    if args.vocab:
        vocab = SubwordVocab.load(args.vocab)
    else:
        vocab = build_vocab(splits["train"].lines)
    scheme = make_scheme(config)
    labeled = {n: build_labeled(d, config, vocab, scheme) for n, d in splits.items()}
    hyper = _hyper_from_path(args.hyper)
    model_config = make_model_config(vocab, scheme, _model_overrides(args.model_config))
    model = init_model(model_config, args.seed)
    checkpoint = train(model, [labeled["train"]], [labeled["validation"]], hyper, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.tsv")
    checkpoint.save(out / "checkpoint.npz")
    best = max((f for _, f in checkpoint.history), default=0.0)
    print(f"trained {name}: best val macro F {best:.4f} at step {checkpoint.best_step}")
    return 0


def cmd_predict(args) -> int:
    _, config = _config_from_args(args)
    lines = corpus.load_lines(args.lines)
    vocab = SubwordVocab.load(args.vocab)
    token_stream = stream_mod.build_stream(lines, config)
    encoded = tok_mod.encode(vocab, token_stream)
    checkpoint = Checkpoint.load(args.checkpoint)
    pred_ids = predict(checkpoint, encoded)
    scheme = make_scheme(config)
    out_obj = {
        "ids": list(encoded.ids),
        "labels": list(pred_ids),
        "scheme": scheme.to_dict(),
        "vocab_fingerprint": encoded.vocab_fingerprint,
    }
    Path(args.out).write_text(json.dumps(out_obj, ensure_ascii=False) + "\n", encoding="utf-8")
    spans, malformed = decode_entry_spans(pred_ids, scheme)
    print(f"predicted {len(spans)} entries ({malformed} malformed) over {len(pred_ids)} tokens")
    return 0


def cmd_eval(args) -> int:
    pred_obj = labeling.load_label_file(args.pred)
    gold_obj = labeling.load_label_file(args.gold)
    if pred_obj["ids"] != gold_obj["ids"]:
        raise MetricsError("prediction and gold files cover different token ids")
    scheme = LabelScheme.from_dict(gold_obj["scheme"])
    pred_ids, gold_ids = pred_obj["labels"], gold_obj["labels"]
    boundary = boundary_metrics(
        labeling.boundary_marks_of(pred_ids, scheme),
        labeling.boundary_marks_of(gold_ids, scheme),
    )
    entities: dict = {}
    micro = None
    if scheme.entity_kinds:
        entities, micro = ner_metrics(
            decode_entity_triples(pred_ids, scheme),
            decode_entity_triples(gold_ids, scheme),
        )
    _, malformed = decode_entry_spans(pred_ids, scheme)
    report = EvalReport(
        boundary=boundary, entities=entities, ner_micro=micro,
        counters={"malformed_pred_entries": malformed, **gold_obj.get("counters", {})},
    )
    Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"macro boundary F: {report.macro_boundary_f:.4f}")
    return 0


def cmd_experiment(args) -> int:
    data_dir = Path(args.data)
    lines, annotations, clean = load_data_dir(data_dir)
    splits = split_corpus(lines, annotations, clean, split_seed=args.split_seed)
    vocab = build_vocab(splits["train"].lines, vocab_size=args.vocab_size)
    seeds = [int(s) for s in args.seeds.split(",")]
    presets = list(PRESETS) if args.presets == "all" else args.presets.split(",")
    hyper = _hyper_from_path(args.hyper)
    overrides = _model_overrides(args.model_config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results: dict[str, EvalReport] = {}
    for name in presets:
        config = get_preset(name)
        report, manifest = run_experiment(
            name, config, splits, seeds, out / name, vocab,
            model_overrides=overrides, hyper=hyper,
        )
        for input_path in ("lines.jsonl", "annotations.jsonl", "clean.jsonl"):
            path = data_dir / input_path
            if path.exists():
                manifest.add_input(path)
        manifest.save(out / name / "manifest.json")
        results[name] = report
        print(f"{name}: macro boundary F = {report.macro_boundary_f:.4f}")
    write_summary(results, out)
    print(f"summary written to {out / 'summary.md'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entrysep",
        description="Entry separation in OCR'd column documents via visual tokens",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--params", help="JSON file with generator parameters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    def add_config_args(p):
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--preset", choices=sorted(PRESETS))
        group.add_argument("--config", help="JSON experiment config file")

    p = sub.add_parser("build-stream", help="build the visual+textual token stream")
    p.add_argument("--lines", required=True)
    add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_stream)

    p = sub.add_parser("tokenizer-train", help="train the subword vocabulary")
    p.add_argument("--lines", required=True)
    p.add_argument("--vocab-size", type=int, default=DEFAULT_VOCAB_SIZE)
    p.add_argument("--mode", choices=("bpe", "char"), default="bpe")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenizer_train)

    p = sub.add_parser("train", help="train one model on one configuration")
    p.add_argument("--data", required=True, help="directory with lines/annotations/clean JSONL")
    add_config_args(p)
    p.add_argument("--vocab", help="vocabulary file (default: train on the train split)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=DEFAULT_SPLIT_SEED)
    p.add_argument("--hyper", help="JSON file with training hyperparameters")
    p.add_argument("--model-config", help="JSON file with model size overrides")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label a line collection with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lines", required=True)
    p.add_argument("--vocab", required=True)
    add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a prediction label file against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run presets end to end and summarize")
    p.add_argument("--data", required=True)
    p.add_argument("--presets", default="all", help="comma list or 'all'")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--split-seed", type=int, default=DEFAULT_SPLIT_SEED)
    p.add_argument("--vocab-size", type=int, default=DEFAULT_VOCAB_SIZE)
    p.add_argument("--hyper", help="JSON file with training hyperparameters")
    p.add_argument("--model-config", help="JSON file with model size overrides")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
