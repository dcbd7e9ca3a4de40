"""Readers/writers/validators for the toolkit's exchange formats.

These mirror the consuming toolkit's on-disk contracts: stories as JSON
lines, parses as CoNLL-U with '# story_id =' comments, sentence embeddings
as a header line 'story_id<TAB>index<TAB><dim>' followed by one row per
sentence. Validation runs before the CLI exits so malformed output never
lands on disk silently.
"""
from __future__ import annotations

import json
from pathlib import Path

from . import AdapterError


def read_stories_jsonl(path) -> list[tuple[str, list[str]]]:
    stories = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
                stories.append((payload["story_id"], list(payload["sentences"])))
            except (json.JSONDecodeError, KeyError) as exc:
                raise AdapterError(f"{path}:{lineno}: bad story line: {exc}") from exc
    return stories


def write_conllu(path, story_id: str,
                 sentences: list[list[tuple]], texts: list[str]) -> None:
    """One story per file; each token row is the 10-column CoNLL-U layout.

    Token tuples are (form, lemma, upos, head, deprel) with 1-based heads and
    0 for the root.
    """
    lines = [f"# story_id = {story_id}"]
    for tokens, text in zip(sentences, texts):
        lines.append(f"# text = {text}")
        for i, (form, lemma, upos, head, deprel) in enumerate(tokens, start=1):
            lines.append(f"{i}\t{form}\t{lemma}\t{upos}\t_\t_\t{head}\t{deprel}\t_\t_")
        lines.append("")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def validate_conllu(path) -> None:
    """Structural check of an emitted CoNLL-U file."""
    saw_story_id = False
    sentence_rows: list[tuple[int, int]] = []

    def close_sentence(where: str):
        if not sentence_rows:
            return
        ids = [i for i, _ in sentence_rows]
        if ids != list(range(1, len(ids) + 1)):
            raise AdapterError(f"{path}: non-contiguous token ids {where}")
        roots = [h for _, h in sentence_rows if h == 0]
        if len(roots) != 1:
            raise AdapterError(f"{path}: {len(roots)} roots {where}")
        if any(h > len(ids) for _, h in sentence_rows):
            raise AdapterError(f"{path}: head beyond sentence {where}")
        sentence_rows.clear()

    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8")
                                 .splitlines(), start=1):
        if raw.startswith("# story_id"):
            saw_story_id = True
            continue
        if raw.startswith("#"):
            continue
        if not raw.strip():
            close_sentence(f"before line {lineno}")
            continue
        cols = raw.split("\t")
        if len(cols) != 10:
            raise AdapterError(f"{path}:{lineno}: {len(cols)} columns, expected 10")
        sentence_rows.append((int(cols[0]), int(cols[6])))
    close_sentence("at end of file")
    if not saw_story_id:
        raise AdapterError(f"{path}: missing '# story_id =' comment")


def write_sentence_embeddings(path, rows: list[tuple[str, int, list[float]]],
                              dim: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"story_id\tindex\t{dim}\n")
        for story_id, index, vector in rows:
            if len(vector) != dim:
                raise AdapterError(f"vector for ({story_id}, {index}) has "
                                   f"{len(vector)} dims, expected {dim}")
            fh.write(f"{story_id}\t{index}\t"
                     + " ".join(f"{v:.6g}" for v in vector) + "\n")


def validate_sentence_embeddings(path, expected_rows: int) -> None:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise AdapterError(f"{path}: empty embedding file")
    header = lines[0].split("\t")
    if len(header) != 3 or header[:2] != ["story_id", "index"]:
        raise AdapterError(f"{path}: bad header {lines[0]!r}")
    dim = int(header[2])
    if len(lines) - 1 != expected_rows:
        raise AdapterError(f"{path}: {len(lines) - 1} rows for "
                           f"{expected_rows} sentences")
    for lineno, row in enumerate(lines[1:], start=2):
        cols = row.split("\t")
        if len(cols) != 3:
            raise AdapterError(f"{path}:{lineno}: expected 3 tab fields")
        if len(cols[2].split()) != dim:
            raise AdapterError(f"{path}:{lineno}: dimension mismatch")
