"""adapter parse|embed: one-shot conversion of story JSON lines into the
toolkit's CoNLL-U and sentence-embedding exchange formats."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import AdapterError, __version__, backends, formats


@dataclass
class AdapterConfig:
    command: str
    backend: str
    model: str | None
    input_path: str
    output_path: str
    batch_size: int = 32


def cmd_parse(config: AdapterConfig) -> int:
    stories = formats.read_stories_jsonl(config.input_path)
    parse = backends.get_parser(config.backend, config.model)
    out_dir = Path(config.output_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for story_id, sentences in stories:
        parsed = [parse(s) for s in sentences]
        path = out_dir / f"{story_id}.conllu"
        formats.write_conllu(path, story_id, parsed, sentences)
        formats.validate_conllu(path)
        written.append(path.name)
    manifest = {"command": "parse", "backend": config.backend,
                "model": config.model, "files": written,
                "adapter_version": __version__}
    (out_dir / "adapter_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"parsed {len(written)} stories -> {out_dir}")
    return 0


def cmd_embed(config: AdapterConfig) -> int:
    stories = formats.read_stories_jsonl(config.input_path)
    embed, dim = backends.get_embedder(config.backend, config.model)
    rows: list[tuple[str, int, list[float]]] = []
    for story_id, sentences in stories:
        vectors = embed(sentences, batch_size=config.batch_size)
        for index, vector in enumerate(vectors):
            rows.append((story_id, index, [float(v) for v in vector]))
    out = Path(config.output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    formats.write_sentence_embeddings(out, rows, dim)
    formats.validate_sentence_embeddings(out, expected_rows=len(rows))
    manifest = {"command": "embed", "backend": config.backend,
                "model": config.model, "dim": dim, "rows": len(rows),
                "adapter_version": __version__}
    out.with_suffix(out.suffix + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"embedded {len(rows)} sentences (dim {dim}) -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adapter",
        description="convert stories to CoNLL-U parses or sentence embeddings")
    parser.add_argument("--version", action="version",
                        version=f"parse-embed-adapter {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="stories.jsonl -> one CoNLL-U file per story")
    p.add_argument("--in", dest="input_path", required=True)
    p.add_argument("--out", dest="output_path", required=True,
                   help="output directory")
    p.add_argument("--backend", default="rules", help="rules or spacy")
    p.add_argument("--model", help="parser model id (spacy backend)")
    p.add_argument("--batch-size", type=int, default=32)

    p = sub.add_parser("embed", help="stories.jsonl -> sentence-embedding file")
    p.add_argument("--in", dest="input_path", required=True)
    p.add_argument("--out", dest="output_path", required=True,
                   help="output file path")
    p.add_argument("--backend", default="hash", help="hash or sbert")
    p.add_argument("--model",
                   help="embedding model id (sbert) or dimension (hash)")
    p.add_argument("--batch-size", type=int, default=32)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = AdapterConfig(command=args.command, backend=args.backend,
                           model=args.model, input_path=args.input_path,
                           output_path=args.output_path,
                           batch_size=args.batch_size)
    try:
        if args.command == "parse":
            return cmd_parse(config)
        return cmd_embed(config)
    except (AdapterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
