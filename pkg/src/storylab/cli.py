"""Batch command-line surface for the full pipeline.

Subcommands: extract, prepare, train, posttrain, generate, evaluate, report.
Configuration precedence is flag > config file > default; every run directory
receives the resolved configuration, the seed, and a version string so runs
can be reproduced byte for byte (wall-clock columns in training logs are the
one exception).
"""
from __future__ import annotations

import argparse
import json
import subprocess
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, bpe, corpus, events, metrics, model
from . import tensor as T


class CliError(RuntimeError):
    pass


# configuration keys accepted in config files; "lambda" maps onto the
# similarity-loss weight.
CONFIG_KEYS = {
    "model_dim": int, "layers": int, "heads": int, "ffn_dim": int,
    "max_positions": int, "beta": float, "delta": float, "lambda": float,
    "dropout": float, "seed": int, "batch_size": int, "learning_rate": float,
    "epochs": int, "steps": int, "strategy": str, "p": float,
    "nucleus_p": float, "infer_batch_size": int, "max_new_tokens": int,
    "vocab_size": int, "max_sentences": int,
}

ABLATIONS = {"cm": "use_cm", "sen": "use_sen", "leading": "use_leading",
             "events": "use_events"}


def version_string() -> str:
    root = Path(__file__).resolve().parent
    try:
        described = subprocess.run(
            ["git", "-C", str(root), "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5)
        suffix = described.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        suffix = ""
    return f"storylab {__version__}" + (f" ({suffix})" if suffix else "")


def read_config_file(path) -> dict:
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise CliError(f"{path}:{lineno}: expected key=value")
        if key not in CONFIG_KEYS:
            raise CliError(f"{path}:{lineno}: unknown configuration key {key!r}")
        caster = CONFIG_KEYS[key]
        try:
            values[key] = caster(value) if caster is not bool else value == "true"
        except ValueError as exc:
            raise CliError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def resolve_settings(args, defaults: dict) -> dict:
    """defaults <- config file <- explicit flags."""
    settings = dict(defaults)
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    flag_map = {"seed": "seed", "beta": "beta", "delta": "delta",
                "lam": "lambda", "epochs": "epochs", "steps": "steps",
                "strategy": "strategy", "p": "p", "batch_size": "batch_size",
                "learning_rate": "learning_rate", "model_dim": "model_dim",
                "layers": "layers", "heads": "heads", "ffn_dim": "ffn_dim",
                "dropout": "dropout", "max_new_tokens": "max_new_tokens",
                "max_positions": "max_positions"}
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            settings[key] = value
    for name in parse_ablations(getattr(args, "ablate", None) or []):
        settings[ABLATIONS[name]] = False
    return settings


def parse_ablations(raw: list[str]) -> list[str]:
    names = []
    for chunk in raw:
        for name in chunk.split(","):
            name = name.strip()
            if not name:
                continue
            if name not in ABLATIONS:
                raise CliError(f"unknown ablation {name!r}; choose from "
                               f"{sorted(ABLATIONS)}")
            names.append(name)
    return names


def write_resolved_config(out_dir: Path, settings: dict, command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{key}={settings[key]}" for key in sorted(settings)]
    (out_dir / "config.txt").write_text("\n".join(lines) + "\n")
    manifest = {"command": command, "seed": settings.get("seed"),
                "version": version_string()}
    if "config_hash" in settings:
        manifest["config_hash"] = settings["config_hash"]
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2,
                                                          sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# extract
# ---------------------------------------------------------------------------


def cmd_extract(args) -> int:
    source = Path(args.conllu)
    paths = sorted(source.glob("*.conllu")) if source.is_dir() else [source]
    stories: list[tuple[str, events.EventSequence]] = []
    for path in paths:
        docs = events.read_story_docs(path.read_text(encoding="utf-8"))
        for story_id, sentences in docs:
            stories.append((story_id, events.extract_sequence(sentences)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    events.write_events_file(out / "events.tsv", stories)
    graph = events.build_event_graph(seq for _, seq in stories)
    events.write_graph_file(out / "graph.tsv", graph)
    print(f"extracted {len(stories)} event sequences, "
          f"{graph.total_count()} graph triples")
    return 0


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------


def _allocate_split(n: int, ratios: list[int]) -> list[int]:
    total = sum(ratios)
    counts = [int(n * r / total) for r in ratios]
    counts[0] += n - sum(counts)
    return counts


def _load_embedding_table(args) -> corpus.EmbeddingTable | None:
    table = None
    if getattr(args, "word_vectors", None):
        table = corpus.EmbeddingTable.load_word_vectors(args.word_vectors)
    if getattr(args, "sent_embeddings", None):
        if table is None:
            table = corpus.EmbeddingTable()
        table.load_sentence_embeddings(args.sent_embeddings)
    return table


def cmd_prepare(args) -> int:
    stories = corpus.read_stories_jsonl(args.stories)
    surfaces_by_id = events.read_events_file(args.events)
    table = _load_embedding_table(args)
    delex = args.delex

    texts_for_bpe: list[str] = []
    pending: list[tuple[str, list[str], list[str | None], int]] = []

    if args.mode == "story":
        for story_id, sentences in stories:
            if story_id not in surfaces_by_id:
                raise CliError(f"story {story_id!r} missing from events file")
            if delex:
                sentences = [corpus.delexicalize(s) for s in sentences]
            surfaces = surfaces_by_id[story_id]
            n_ref = min(len(sentences), corpus.MAX_STORY_SENTENCES) - 1
            if len(surfaces) == n_ref + 1:
                surfaces = surfaces[1:]
            elif len(surfaces) != n_ref:
                raise CliError(f"story {story_id!r}: {len(surfaces)} events for "
                               f"{n_ref} reference sentences")
            pending.append((story_id, sentences, surfaces, 1))
            texts_for_bpe.extend(sentences)
    else:  # book mode: non-overlapping windows over each long text
        for story_id, sentences in stories:
            if story_id not in surfaces_by_id:
                raise CliError(f"text {story_id!r} missing from events file")
            if delex:
                sentences = [corpus.delexicalize(s) for s in sentences]
            surfaces = surfaces_by_id[story_id]
            if len(surfaces) != len(sentences):
                raise CliError(f"text {story_id!r}: {len(surfaces)} events for "
                               f"{len(sentences)} sentences")
            windows = corpus.segment_for_posttraining(sentences)
            start = 0
            for k, (leading, target) in enumerate(windows):
                window_surfaces = surfaces[start + 1:start + 1 + len(target)]
                pending.append((f"{story_id}:w{k}", [leading] + target,
                                window_surfaces, start + 1))
                texts_for_bpe.extend([leading] + target)
                start += len(target) + 1

    if not pending:
        raise CliError("no stories to prepare")
    event_texts = {sid: events.serialize_surfaces(surf)
                   for sid, _, surf, _ in pending}
    vocab = bpe.train_bpe(texts_for_bpe + sorted(event_texts.values()),
                          target_size=args.vocab_size,
                          max_sentences=args.max_sentences)

    records = []
    for story_id, sentences, surfaces, offset in pending:
        record = corpus.build_record(story_id, sentences, event_texts[story_id],
                                     vocab)
        if table is not None:
            record = corpus.annotate_similarity(record, table, index_offset=offset)
        record.validate(len(vocab))
        records.append(record)

    rng = T.seeded_rng(args.seed, stream=10)
    order = rng.permutation(len(records))
    ratios = [int(x) for x in args.split.split(",")]
    if len(ratios) != 3:
        raise CliError(f"--split wants three comma-separated weights, got {args.split}")
    n_train, n_dev, n_test = _allocate_split(len(records), ratios)
    splits = {"train": [records[i] for i in order[:n_train]],
              "dev": [records[i] for i in order[n_train:n_train + n_dev]],
              "test": [records[i] for i in order[n_train + n_dev:]]}

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, recs in splits.items():
        corpus.write_records_jsonl(out / f"records_{name}.jsonl", recs)
    vocab.save(out / "vocab.json")
    manifest = {"counts": {k: len(v) for k, v in splits.items()},
                "mode": args.mode, "seed": args.seed,
                "vocab_size": len(vocab), "max_sentences": args.max_sentences,
                "delexicalized": bool(delex),
                "has_similarity": table is not None,
                "version": version_string()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                  sort_keys=True) + "\n")
    print(f"prepared {len(records)} records "
          f"({manifest['counts']['train']}/{manifest['counts']['dev']}/"
          f"{manifest['counts']['test']}), vocabulary {len(vocab)}")
    return 0


# ---------------------------------------------------------------------------
# train / posttrain
# ---------------------------------------------------------------------------


def _load_dataset(data_dir):
    data_dir = Path(data_dir)
    vocab = bpe.BpeVocab.load(data_dir / "vocab.json")
    manifest = json.loads((data_dir / "manifest.json").read_text())
    splits = {}
    for name in ("train", "dev", "test"):
        path = data_dir / f"records_{name}.jsonl"
        splits[name] = corpus.read_records_jsonl(path) if path.exists() else []
    return vocab, manifest, splits


TRAIN_DEFAULTS = {"seed": 42, "beta": 0.1, "delta": 0.1, "lambda": 0.1,
                  "dropout": 0.1, "batch_size": 64, "learning_rate": 8e-5,
                  "epochs": 5, "steps": None, "model_dim": 64, "layers": 2,
                  "heads": 4, "ffn_dim": 128, "max_positions": 256,
                  "strategy": "nucleus", "p": 0.9, "max_new_tokens": 150}


def _config_from_settings(settings: dict, vocab, manifest,
                          ablations: dict) -> model.ModelConfig:
    return model.ModelConfig(
        vocab_size=len(vocab), model_dim=settings["model_dim"],
        layers=settings["layers"], heads=settings["heads"],
        ffn_dim=settings["ffn_dim"], max_positions=settings["max_positions"],
        max_sentences=manifest["max_sentences"], beta=settings["beta"],
        delta=settings["delta"], lam=settings["lambda"],
        dropout=settings["dropout"], seed=settings["seed"],
        batch_size=settings["batch_size"],
        learning_rate=settings["learning_rate"], epochs=settings["epochs"],
        nucleus_p=settings["p"], **ablations)


def cmd_train(args) -> int:
    vocab, manifest, splits = _load_dataset(args.data)
    if not splits["train"]:
        raise CliError(f"no training records under {args.data}")
    settings = resolve_settings(args, TRAIN_DEFAULTS)
    ablations = {ABLATIONS[n]: False for n in parse_ablations(args.ablate or [])}
    config = _config_from_settings(settings, vocab, manifest, ablations)

    state = None
    if args.init_from and args.transfer_encoder_from:
        raise CliError("--init-from and --transfer-encoder-from are exclusive")
    if args.init_from:
        state = model.load_model(args.init_from)
        if state.config.vocab_size != len(vocab):
            raise CliError("training data vocabulary does not match the "
                           "initial checkpoint")
    elif args.transfer_encoder_from:
        donor = model.load_model(args.transfer_encoder_from)
        state = model.init_model(config)
        model.transfer_encoder_weights(donor, state)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = model.train(splits["train"], config, vocab,
                         epochs=settings["epochs"], max_steps=settings["steps"],
                         val_records=splits["dev"] or None, state=state,
                         log_path=out / "train_log.csv")
    model.save_model(out, result.state)
    settings["config_hash"] = result.state.config.shape_hash()
    resolved = dict(settings)
    resolved.update({name: getattr(result.state.config, name)
                     for name in ABLATIONS.values()})
    write_resolved_config(out, resolved, "train")
    final = result.curve[-1] if result.curve else {}
    print(f"trained {len(result.curve)} steps; final l_lm="
          f"{final.get('l_lm', float('nan')):.4f}"
          + (f", best val {result.best_val:.4f}" if result.best_val is not None
             else ""))
    return 0


def cmd_posttrain(args) -> int:
    vocab, manifest, splits = _load_dataset(args.data)
    if not splits["train"]:
        raise CliError(f"no post-training records under {args.data}")
    state = model.load_model(args.init)
    if state.config.vocab_size != len(vocab):
        raise CliError("post-training data was prepared with a different "
                       "vocabulary than the checkpoint")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = model.posttrain(state, splits["train"], vocab, epochs=args.epochs,
                             log_path=out / "train_log.csv")
    model.save_model(out, result.state)
    settings = {"seed": state.config.seed, "epochs": args.epochs,
                "config_hash": state.config.shape_hash(),
                "lineage": result.state.lineage}
    write_resolved_config(out, settings, "posttrain")
    print(f"post-trained {len(result.curve)} steps; lineage "
          f"{result.state.lineage!r}")
    return 0


# ---------------------------------------------------------------------------
# generate / evaluate / report
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    vocab, manifest, splits = _load_dataset(args.data)
    records = splits[args.split]
    if not records:
        raise CliError(f"no records in split {args.split!r}")
    overrides = {ABLATIONS[n]: False for n in parse_ablations(args.ablate or [])}
    if args.seed is not None:
        overrides["seed"] = args.seed
    state = model.load_model(args.run, overrides=overrides)
    if state.config.vocab_size != len(vocab):
        raise CliError("generation data vocabulary does not match the checkpoint")
    strategy = args.strategy or "nucleus"
    p = args.p if args.p is not None else state.config.nucleus_p
    rng = T.seeded_rng(state.config.seed, stream=20)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    warned = False
    with open(out, "w", encoding="utf-8") as fh:
        for record in records:
            result = model.generate(state, vocab, record.leading_text,
                                    record.event_text, strategy=strategy, p=p,
                                    rng=rng, max_new_tokens=args.max_new_tokens)
            warned = warned or bool(result.warnings)
            fh.write(json.dumps({"story_id": record.story_id,
                                 "text": result.text}) + "\n")
    settings = {"strategy": strategy, "p": p, "split": args.split,
                "seed": state.config.seed,
                "config_hash": state.config.shape_hash()}
    settings.update({name: getattr(state.config, name)
                     for name in ABLATIONS.values()})
    write_resolved_config(out.parent, settings, "generate")
    if warned:
        print("warning: generating from an untrained checkpoint", file=sys.stderr)
    print(f"generated {len(records)} stories -> {out}")
    return 0


def _read_generated(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                payload = json.loads(line)
                out[payload["story_id"]] = payload["text"]
    return out


def cmd_evaluate(args) -> int:
    vocab, manifest, splits = _load_dataset(args.data)
    records = splits[args.split]
    generated = _read_generated(args.generated)
    missing = [r.story_id for r in records if r.story_id not in generated]
    if missing:
        raise CliError(f"generated file lacks stories: {', '.join(missing[:5])}")
    candidates = [generated[r.story_id] for r in records]
    references = [" ".join(r.sentence_texts) for r in records]
    leadings = [r.leading_text for r in records]

    tables = {}
    for spec in args.embeddings or []:
        name, sep, path = spec.partition("=")
        if not sep:
            raise CliError(f"--embeddings wants name=path, got {spec!r}")
        tables[name] = corpus.EmbeddingTable.load_word_vectors(path)

    report = metrics.evaluate_generated(candidates, references, leadings,
                                        tables=tables, model=args.model_name,
                                        ablation=args.ablation_name,
                                        smooth_bleu=args.smooth_bleu)
    if args.run:
        state = model.load_model(args.run)
        report.ppl = metrics.corpus_perplexity(state, records, vocab)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    metrics.write_report_tsv(out / "report.tsv", [report])
    metrics.write_repetition_series(out / "repetition_series.tsv", report)
    print(f"evaluated {len(records)} stories -> {out}/report.json")
    return 0


def cmd_report(args) -> int:
    reports = [metrics.MetricReport.from_json(Path(p).read_text())
               for p in args.inputs]
    metrics.write_report_tsv(args.out, reports)
    print(f"merged {len(reports)} reports -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="storylab",
        description="event-triggered, context-aware story generation lab")
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="CoNLL-U -> events and event graph")
    p.add_argument("--conllu", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("prepare", help="stories + events -> tokenized records")
    p.add_argument("--stories", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--word-vectors")
    p.add_argument("--sent-embeddings")
    p.add_argument("--mode", choices=("story", "book"), default="story")
    p.add_argument("--split", default="8,1,1")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--vocab-size", type=int, default=4096)
    p.add_argument("--max-sentences", type=int, default=10)
    p.add_argument("--delex", action="store_true")
    p.set_defaults(func=cmd_prepare)

    def add_train_flags(p):
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--beta", type=float)
        p.add_argument("--delta", type=float)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--model-dim", dest="model_dim", type=int)
        p.add_argument("--layers", type=int)
        p.add_argument("--heads", type=int)
        p.add_argument("--ffn-dim", dest="ffn_dim", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--max-positions", dest="max_positions", type=int)
        p.add_argument("--ablate", action="append",
                       help="comma-separated subset of cm,sen,leading,events")

    p = sub.add_parser("train", help="train on prepared records")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init-from",
                   help="run directory to resume from (fine-tuning)")
    p.add_argument("--transfer-encoder-from",
                   help="run directory donating encoder weights to the "
                        "event encoder")
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("posttrain", help="continue training on long-text records")
    p.add_argument("--data", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.set_defaults(func=cmd_posttrain)

    p = sub.add_parser("generate", help="decode stories for a record split")
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=("greedy", "nucleus"))
    p.add_argument("--p", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int,
                   default=150)
    p.add_argument("--ablate", action="append")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated stories")
    p.add_argument("--generated", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--run", help="checkpoint for perplexity")
    p.add_argument("--embeddings", action="append",
                   help="name=path word-vector table (repeatable)")
    p.add_argument("--model-name", default="model")
    p.add_argument("--ablation-name", default="full")
    p.add_argument("--smooth-bleu", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="merge evaluation reports into one TSV")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, corpus.CorpusError, corpus.MissingEmbeddingError,
            events.ConlluError, bpe.VocabError, model.ModelError,
            metrics.MetricError, T.CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
