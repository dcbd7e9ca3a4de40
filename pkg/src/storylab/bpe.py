"""Byte-pair vocabulary: greedy pair merges over whitespace-delimited chunks.

Special tokens are atomic on both sides: the encoder splits them out before
any merge is applied, and the trainer refuses to create a merged symbol that
collides with one. Whitespace runs are encoded character by character, so
decode(encode(text)) reproduces text exactly whenever every character is in
the base alphabet.
"""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
GENDER_TOKENS = ("[MALE]", "[FEMALE]", "[NEUTRAL]")
EVENT_TOKENS = ("<e_s>", "<e_sep>", "<e_e>", "<e_none>")


def sep_token(i: int) -> str:
    return f"[sep_{i}]"


def special_tokens(max_sentences: int) -> list[str]:
    seps = [sep_token(i) for i in range(1, max_sentences + 1)]
    return [PAD, BOS, EOS, UNK, *EVENT_TOKENS, *GENDER_TOKENS, *seps]


class VocabError(ValueError):
    pass


@dataclass
class BpeVocab:
    merges: list[tuple[str, str]]
    token_to_id: dict[str, int]
    id_to_token: list[str]
    max_sentences: int
    _special_re: re.Pattern = field(init=False, repr=False)
    _cache: dict[str, tuple[int, ...]] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        specials = special_tokens(self.max_sentences)
        pattern = "|".join(re.escape(s) for s in sorted(specials, key=len, reverse=True))
        self._special_re = re.compile(f"({pattern})")
        self._specials = set(specials)

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    def sep_id(self, i: int) -> int:
        return self.token_to_id[sep_token(i)]

    def is_special_id(self, token_id: int) -> bool:
        return self.id_to_token[token_id] in self._specials

    def _encode_chunk(self, chunk: str) -> tuple[int, ...]:
        cached = self._cache.get(chunk)
        if cached is not None:
            return cached
        symbols = list(chunk)
        for a, b in self.merges:
            if len(symbols) < 2:
                break
            merged = a + b
            i = 0
            out = []
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            symbols = out
        ids = tuple(self.token_to_id.get(s, self.token_to_id[UNK]) for s in symbols)
        self._cache[chunk] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for part in self._special_re.split(text):
            if not part:
                continue
            if part in self._specials:
                ids.append(self.token_to_id[part])
                continue
            for chunk in re.findall(r"\S+|\s+", part):
                if chunk.isspace():
                    ids.extend(self.token_to_id.get(c, self.token_to_id[UNK])
                               for c in chunk)
                else:
                    ids.extend(self._encode_chunk(chunk))
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.id_to_token[i] for i in ids)

    def save(self, path) -> None:
        payload = {"merges": self.merges, "tokens": self.id_to_token,
                   "max_sentences": self.max_sentences}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False)

    @classmethod
    def load(cls, path) -> "BpeVocab":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        tokens = payload["tokens"]
        return cls(merges=[tuple(m) for m in payload["merges"]],
                   token_to_id={t: i for i, t in enumerate(tokens)},
                   id_to_token=list(tokens),
                   max_sentences=payload["max_sentences"])


def _pair_counts(chunks: dict[tuple[str, ...], int]) -> Counter:
    counts: Counter = Counter()
    for symbols, freq in chunks.items():
        for a, b in zip(symbols, symbols[1:]):
            counts[(a, b)] += freq
    return counts


def train_bpe(corpus: Iterable[str], target_size: int,
              max_sentences: int = 10) -> BpeVocab:
    """Learn merges by repeatedly joining the most frequent adjacent pair.

    Ties break lexicographically on the pair. Stops at target_size or when no
    pair occurs at least twice.
    """
    specials = special_tokens(max_sentences)
    special_set = set(specials)
    chunk_freq: Counter = Counter()
    alphabet: set[str] = set()
    special_re = re.compile(
        "(" + "|".join(re.escape(s) for s in sorted(special_set, key=len, reverse=True)) + ")")
    for line in corpus:
        for part in special_re.split(line):
            if not part or part in special_set:
                continue
            alphabet.update(c for c in part if c.isspace())
            for chunk in re.findall(r"\S+", part):
                chunk_freq[chunk] += 1
                alphabet.update(chunk)
    if not chunk_freq and not alphabet:
        raise VocabError("cannot train a vocabulary on an empty corpus")
    base_size = len(specials) + len(alphabet)
    if target_size <= base_size:
        raise VocabError(f"target size {target_size} does not exceed specials "
                         f"plus base alphabet ({base_size})")

    chunks = {tuple(chunk): freq for chunk, freq in chunk_freq.items()}
    merges: list[tuple[str, str]] = []
    vocab_size = base_size
    while vocab_size < target_size:
        counts = _pair_counts(chunks)
        counts = Counter({p: c for p, c in counts.items()
                          if p[0] + p[1] not in special_set})
        if not counts:
            break
        best_count = max(counts.values())
        if best_count < 2:
            break
        best = min(p for p, c in counts.items() if c == best_count)
        merges.append(best)
        a, b = best
        merged = a + b
        next_chunks: dict[tuple[str, ...], int] = {}
        for symbols, freq in chunks.items():
            if a not in symbols:
                next_chunks[symbols] = next_chunks.get(symbols, 0) + freq
                continue
            out = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            key = tuple(out)
            next_chunks[key] = next_chunks.get(key, 0) + freq
        chunks = next_chunks
        vocab_size += 1

    tokens = list(specials) + sorted(alphabet) + [a + b for a, b in merges]
    return BpeVocab(merges=merges,
                    token_to_id={t: i for i, t in enumerate(tokens)},
                    id_to_token=tokens,
                    max_sentences=max_sentences)
