"""Story records: splitting, delexicalization, similarity ground truth,
post-training segmentation, and the file formats the pipeline moves through.
"""
from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from . import lexicon
from .bpe import BpeVocab

MAX_STORY_SENTENCES = 11  # 1 leading + 10 target


class CorpusError(ValueError):
    pass


class MissingEmbeddingError(KeyError):
    def __init__(self, story_id: str, index: int):
        super().__init__(f"no sentence embedding for story {story_id!r}, "
                         f"sentence {index}")
        self.story_id = story_id
        self.index = index


# ---------------------------------------------------------------------------
# sentence handling
# ---------------------------------------------------------------------------

_ABBREVIATIONS = {"mr", "mrs", "ms", "dr", "st", "prof", "sr", "jr", "vs", "etc",
                  "e.g", "i.e"}
_SENT_BOUNDARY = re.compile(r'([.!?]+["\'”’]?)(\s+)')


def split_sentences(text: str) -> list[str]:
    """Period/question/exclamation splitting with an abbreviation stop-list."""
    pieces: list[str] = []
    start = 0
    for match in _SENT_BOUNDARY.finditer(text):
        end = match.end(1)
        prefix = text[start:end]
        last_word = re.findall(r"[A-Za-z.]+(?=[.!?])", prefix[-20:])
        if last_word and last_word[-1].lower().rstrip(".") in _ABBREVIATIONS:
            continue
        pieces.append(prefix.strip())
        start = match.end()
    tail = text[start:].strip()
    if tail:
        pieces.append(tail)
    return [p for p in pieces if p]


def split_story(raw: list[str]) -> tuple[str, list[str]]:
    """First sentence becomes the conditioning context, the rest the target.

    Long stories are truncated to MAX_STORY_SENTENCES before splitting.
    """
    if len(raw) < 2:
        raise CorpusError(f"story needs at least 2 sentences, got {len(raw)}")
    raw = raw[:MAX_STORY_SENTENCES]
    return raw[0], list(raw[1:])


def segment_for_posttraining(raw: list[str]) -> list[tuple[str, list[str]]]:
    """Tile a long text into (1 leading + up to 10 target) windows.

    A trailing window shorter than 11 sentences is kept when it still has a
    target sentence, otherwise dropped.
    """
    out = []
    for start in range(0, len(raw), MAX_STORY_SENTENCES):
        window = raw[start:start + MAX_STORY_SENTENCES]
        if len(window) >= 2:
            out.append((window[0], list(window[1:])))
    return out


# ---------------------------------------------------------------------------
# delexicalization
# ---------------------------------------------------------------------------

_PLACEHOLDER = re.compile(r"(\[(?:MALE|FEMALE|NEUTRAL)\])")
_CAP_WORD = re.compile(r"\b[A-Z][a-zA-Z]*\b")


def default_name_lexicon() -> dict[str, str]:
    table = {name: "[MALE]" for name in lexicon.MALE_NAMES}
    table.update({name: "[FEMALE]" for name in lexicon.FEMALE_NAMES})
    return table


def delexicalize(text: str, name_lexicon: Optional[dict[str, str]] = None) -> str:
    """Replace proper names with gender placeholders, consistently per story.

    A capitalized token maps to its lexicon gender token when known; other
    capitalized tokens not on the common-word stoplist become [NEUTRAL].
    Existing placeholders are left untouched, so the operation is idempotent.
    """
    if name_lexicon is None:
        name_lexicon = default_name_lexicon()
    assigned: dict[str, str] = {}

    def replace_token(match: re.Match) -> str:
        word = match.group(0)
        low = word.lower()
        if low in assigned:
            return assigned[low]
        if low in name_lexicon:
            assigned[low] = name_lexicon[low]
        elif low in lexicon.COMMON_WORDS:
            return word
        else:
            assigned[low] = "[NEUTRAL]"
        return assigned[low]

    parts = _PLACEHOLDER.split(text)
    return "".join(part if _PLACEHOLDER.fullmatch(part)
                   else _CAP_WORD.sub(replace_token, part)
                   for part in parts)


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

_WORD = re.compile(r"\[[A-Z]+\]|[A-Za-z0-9']+")


class EmbeddingTable:
    """Word vectors plus an optional precomputed sentence-embedding store."""

    def __init__(self, words: Optional[dict[str, np.ndarray]] = None,
                 dim: Optional[int] = None):
        self.words = words or {}
        if dim is None and self.words:
            dim = len(next(iter(self.words.values())))
        self.dim = dim
        self.sentences: dict[tuple[str, int], np.ndarray] = {}

    @classmethod
    def load_word_vectors(cls, path) -> "EmbeddingTable":
        words: dict[str, np.ndarray] = {}
        dim = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split()
                if not parts:
                    continue
                word, values = parts[0], parts[1:]
                if dim is None:
                    dim = len(values)
                elif len(values) != dim:
                    raise CorpusError(f"{path}:{lineno}: expected {dim} values, "
                                      f"got {len(values)}")
                words[word] = np.array([float(v) for v in values])
        if not words:
            raise CorpusError(f"{path}: empty word-vector file")
        return cls(words=words, dim=dim)

    def load_sentence_embeddings(self, path) -> None:
        """Read the header-plus-rows sentence-embedding format.

        Header: 'story_id<TAB>index<TAB><dim>'. Each row: story id, sentence
        index within the story, then the vector as space-separated floats.
        """
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            if len(header) != 3 or header[0] != "story_id" or header[1] != "index":
                raise CorpusError(f"{path}: bad sentence-embedding header {header!r}")
            dim = int(header[2])
            if self.dim is None:
                self.dim = dim
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                story_id, index, values = line.rstrip("\n").split("\t")
                vec = np.array([float(v) for v in values.split()])
                if len(vec) != dim:
                    raise CorpusError(f"{path}:{lineno}: expected {dim} floats, "
                                      f"got {len(vec)}")
                self.sentences[(story_id, int(index))] = vec

    def word_mean(self, text: str) -> Optional[np.ndarray]:
        tokens = [w if w.startswith("[") else w.lower()
                  for w in _WORD.findall(text)]
        vecs = [self.words[w] for w in tokens if w in self.words]
        if not vecs:
            return None
        return np.mean(vecs, axis=0)

    def sentence_vector(self, story_id: str, index: int,
                        text: Optional[str] = None) -> np.ndarray:
        """Stored sentence embedding, else the mean-word-vector fallback."""
        key = (story_id, index)
        if key in self.sentences:
            return self.sentences[key]
        if text is not None and self.words:
            mean = self.word_mean(text)
            if mean is not None and np.linalg.norm(mean) > 0:
                return mean
        raise MissingEmbeddingError(story_id, index)


def write_sentence_embeddings(path, rows: Iterable[tuple[str, int, np.ndarray]],
                              dim: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"story_id\tindex\t{dim}\n")
        for story_id, index, vec in rows:
            if len(vec) != dim:
                raise CorpusError(f"vector for ({story_id}, {index}) has length "
                                  f"{len(vec)}, expected {dim}")
            fh.write(f"{story_id}\t{index}\t" + " ".join(f"{v:.6g}" for v in vec) + "\n")


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


@dataclass
class StoryRecord:
    story_id: str
    leading_text: str
    sentence_texts: list[str]
    leading_ids: list[int]
    sentence_ids: list[list[int]]
    event_text: str
    event_ids: list[int]
    sim: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return len(self.sentence_texts)

    def validate(self, vocab_size: int) -> None:
        if len(self.sentence_ids) != self.m:
            raise CorpusError(f"{self.story_id}: {len(self.sentence_ids)} tokenized "
                              f"sentences for {self.m} texts")
        all_ids = (self.leading_ids + self.event_ids
                   + [i for s in self.sentence_ids for i in s])
        if all_ids and max(all_ids) >= vocab_size:
            raise CorpusError(f"{self.story_id}: token id {max(all_ids)} outside "
                              f"vocabulary of {vocab_size}")
        if self.sim is not None:
            if self.sim.shape != (self.m, self.m):
                raise CorpusError(f"{self.story_id}: similarity matrix "
                                  f"{self.sim.shape} for {self.m} sentences")
            if not np.allclose(self.sim, self.sim.T):
                raise CorpusError(f"{self.story_id}: similarity matrix not symmetric")
            if not np.allclose(np.diag(self.sim), 1.0, atol=1e-6):
                raise CorpusError(f"{self.story_id}: similarity diagonal off unity")

    def to_json_line(self) -> str:
        payload = {
            "story_id": self.story_id,
            "leading_text": self.leading_text,
            "sentence_texts": self.sentence_texts,
            "leading_ids": self.leading_ids,
            "sentence_ids": self.sentence_ids,
            "event_text": self.event_text,
            "event_ids": self.event_ids,
        }
        if self.sim is not None:
            payload["sim_b64"] = base64.b64encode(
                np.ascontiguousarray(self.sim, dtype="<f4").tobytes()).decode("ascii")
        return json.dumps(payload, ensure_ascii=False)

    @classmethod
    def from_json_line(cls, line: str) -> "StoryRecord":
        payload = json.loads(line)
        sim = None
        if "sim_b64" in payload:
            m = len(payload["sentence_texts"])
            sim = np.frombuffer(base64.b64decode(payload["sim_b64"]),
                                dtype="<f4").astype(np.float64).reshape(m, m)
        return cls(story_id=payload["story_id"],
                   leading_text=payload["leading_text"],
                   sentence_texts=payload["sentence_texts"],
                   leading_ids=payload["leading_ids"],
                   sentence_ids=[list(s) for s in payload["sentence_ids"]],
                   event_text=payload["event_text"],
                   event_ids=payload["event_ids"],
                   sim=sim)


def build_record(story_id: str, sentences: list[str], event_text: str,
                 vocab: BpeVocab) -> StoryRecord:
    leading, reference = split_story(sentences)
    return StoryRecord(
        story_id=story_id,
        leading_text=leading,
        sentence_texts=reference,
        leading_ids=vocab.encode(leading),
        sentence_ids=[vocab.encode(s) for s in reference],
        event_text=event_text,
        event_ids=vocab.encode(event_text),
    )


def annotate_similarity(record: StoryRecord, table: EmbeddingTable,
                        index_offset: int = 1) -> StoryRecord:
    """Fill in the ground-truth sentence-similarity matrix from embeddings.

    `index_offset` maps record sentence i to the embedding store index of the
    same sentence within the original story (the leading sentence is index 0).
    """
    vecs = [table.sentence_vector(record.story_id, i + index_offset, text)
            for i, text in enumerate(record.sentence_texts)]
    m = len(vecs)
    sim = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            denom = np.linalg.norm(vecs[i]) * np.linalg.norm(vecs[j])
            value = float(vecs[i] @ vecs[j]) / denom
            sim[i, j] = sim[j, i] = value
    return replace(record, sim=sim)


def insert_sep_tokens(sentence_ids: list[list[int]], vocab: BpeVocab) -> list[int]:
    """Flatten sentences as s1 [sep_1] s2 [sep_2] ... [sep_m] <eos>."""
    m = len(sentence_ids)
    if m > vocab.max_sentences:
        raise CorpusError(f"{m} sentences exceed the configured maximum of "
                          f"{vocab.max_sentences}")
    flat: list[int] = []
    for i, ids in enumerate(sentence_ids, start=1):
        flat.extend(ids)
        flat.append(vocab.sep_id(i))
    flat.append(vocab.eos_id)
    return flat


# ---------------------------------------------------------------------------
# jsonl story files
# ---------------------------------------------------------------------------


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
                raise CorpusError(f"{path}:{lineno}: bad story record: {exc}") from exc
    return stories


def write_records_jsonl(path, records: Iterable[StoryRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json_line() + "\n")


def read_records_jsonl(path) -> list[StoryRecord]:
    with open(path, encoding="utf-8") as fh:
        return [StoryRecord.from_json_line(line) for line in fh if line.strip()]
