"""Automatic evaluation: perplexity, n-gram overlap and diversity scores,
and embedding-based intra-story coherence and relevance.

All text metrics run on one fixed tokenization (lowercased, punctuation split
off) so scores are comparable across runs.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .corpus import EmbeddingTable


class MetricError(ValueError):
    pass


_TOKEN = re.compile(r"\[[a-z]+_?\d*\]|[a-z0-9']+|[^\sa-z0-9']")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def ngrams(tokens: list[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


# ---------------------------------------------------------------------------
# perplexity
# ---------------------------------------------------------------------------


def perplexity_from_logprobs(logprobs: Iterable[float]) -> float:
    """exp of the mean negative log probability (nats per token)."""
    values = list(logprobs)
    if not values:
        raise MetricError("perplexity over zero tokens")
    return math.exp(-sum(values) / len(values))


def corpus_perplexity(state, records, vocab) -> float:
    """Teacher-forced perplexity of the references under the model."""
    from . import model as model_mod
    from . import tensor as T
    if not records:
        raise MetricError("perplexity over an empty dataset")
    total_nats = 0.0
    total_tokens = 0
    with T.no_grad():
        for record in records:
            out = model_mod.forward_record(state, record, vocab)
            total_nats += out.ce_sum.item()
            total_tokens += out.token_count
    return math.exp(total_nats / total_tokens)


# ---------------------------------------------------------------------------
# reference overlap metrics
# ---------------------------------------------------------------------------


def _check_paired(candidates, references):
    if len(candidates) != len(references):
        raise MetricError(f"{len(candidates)} candidates vs "
                          f"{len(references)} references")


def bleu_n(candidates: list[str], references: list[str], n: int,
           smooth: bool = False) -> float:
    """Corpus-level geometric mean of clipped n-gram precisions with brevity
    penalty; optional add-one smoothing on zero higher-order counts."""
    if n < 1:
        raise MetricError(f"bleu order must be >= 1, got {n}")
    _check_paired(candidates, references)
    matches = [0] * n
    totals = [0] * n
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_tokens, ref_tokens = tokenize(cand), tokenize(ref)
        cand_len += len(cand_tokens)
        ref_len += len(ref_tokens)
        for k in range(1, n + 1):
            cand_counts = Counter(ngrams(cand_tokens, k))
            ref_counts = Counter(ngrams(ref_tokens, k))
            matches[k - 1] += sum(min(c, ref_counts[g])
                                  for g, c in cand_counts.items())
            totals[k - 1] += max(0, len(cand_tokens) - k + 1)
    log_sum = 0.0
    for k in range(n):
        m, t = matches[k], totals[k]
        if smooth and k > 0 and m == 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_sum += math.log(m / t)
    if cand_len == 0:
        return 0.0
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_sum / n)


def rouge_n(candidates: list[str], references: list[str], n: int,
            mode: str = "f1") -> float:
    """Clipped n-gram overlap against the reference, averaged over stories."""
    if n < 1:
        raise MetricError(f"rouge order must be >= 1, got {n}")
    if mode not in ("f1", "recall"):
        raise MetricError(f"unknown rouge mode {mode!r}")
    _check_paired(candidates, references)
    scores = []
    for cand, ref in zip(candidates, references):
        cand_counts = Counter(ngrams(tokenize(cand), n))
        ref_counts = Counter(ngrams(tokenize(ref), n))
        overlap = sum(min(c, cand_counts[g]) for g, c in ref_counts.items())
        ref_total = sum(ref_counts.values())
        cand_total = sum(cand_counts.values())
        recall = overlap / ref_total if ref_total else 0.0
        if mode == "recall":
            scores.append(recall)
            continue
        precision = overlap / cand_total if cand_total else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        scores.append(f1)
    return float(np.mean(scores)) if scores else 0.0


def _lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidates: list[str], references: list[str],
            mode: str = "f1") -> float:
    """Longest-common-subsequence overlap, F1 by default."""
    if mode not in ("f1", "recall"):
        raise MetricError(f"unknown rouge mode {mode!r}")
    _check_paired(candidates, references)
    scores = []
    for cand, ref in zip(candidates, references):
        cand_tokens, ref_tokens = tokenize(cand), tokenize(ref)
        lcs = _lcs_length(cand_tokens, ref_tokens)
        recall = lcs / len(ref_tokens) if ref_tokens else 0.0
        if mode == "recall":
            scores.append(recall)
            continue
        precision = lcs / len(cand_tokens) if cand_tokens else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        scores.append(f1)
    return float(np.mean(scores)) if scores else 0.0


# ---------------------------------------------------------------------------
# unreferenced metrics
# ---------------------------------------------------------------------------


def distinct_n(candidates: list[str], n: int) -> float:
    """Unique-to-total n-gram ratio over the whole generated corpus."""
    if n < 1:
        raise MetricError(f"distinct order must be >= 1, got {n}")
    seen = set()
    total = 0
    for cand in candidates:
        for gram in ngrams(tokenize(cand), n):
            seen.add(gram)
            total += 1
    if total == 0:
        raise MetricError("distinct over an empty corpus")
    return len(seen) / total


def lexical_repetition_n(candidates: list[str], n: int, gram: int = 4) -> float:
    """Fraction of stories containing any `gram`-gram repeated >= n times."""
    if n < 2:
        raise MetricError(f"repetition threshold must be >= 2, got {n}")
    if not candidates:
        return 0.0
    flagged = 0
    for cand in candidates:
        counts = Counter(ngrams(tokenize(cand), gram))
        if counts and max(counts.values()) >= n:
            flagged += 1
    return flagged / len(candidates)


def intra_story_repetition(sentences: list[str]) -> tuple[list[float], float]:
    """Per-sentence fraction of trigrams already seen earlier in the story.

    The first element of `sentences` is the leading context, which only seeds
    the history; scores are reported for sentences 2..m (story order).
    """
    if len(sentences) < 2:
        raise MetricError("intra-story repetition needs at least 2 sentences")
    seen: set[tuple[str, ...]] = set(ngrams(tokenize(sentences[0]), 3))
    scores = []
    for sentence in sentences[1:]:
        grams = ngrams(tokenize(sentence), 3)
        if grams:
            scores.append(sum(1 for g in grams if g in seen) / len(grams))
        else:
            scores.append(0.0)
        seen.update(grams)
    aggregate = float(np.mean(scores)) if scores else 0.0
    return scores, aggregate


def _sentence_vector(table: EmbeddingTable, text: str) -> Optional[np.ndarray]:
    vec = table.word_mean(text)
    if vec is None or not np.linalg.norm(vec) > 0:
        return None
    return vec


def _cos(u: np.ndarray, v: np.ndarray) -> float:
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def intra_story_coherence(sentences: list[str],
                          table: EmbeddingTable) -> tuple[float, int]:
    """Mean cosine between consecutive sentence vectors; returns the score and
    the number of sentences skipped for having no in-vocabulary words."""
    vectors = [_sentence_vector(table, s) for s in sentences]
    skipped = sum(1 for v in vectors if v is None)
    kept = [v for v in vectors if v is not None]
    pairs = [_cos(a, b) for a, b in zip(kept, kept[1:])]
    return (float(np.mean(pairs)) if pairs else 0.0), skipped


def intra_story_relevance(leading: str, sentences: list[str],
                          table: EmbeddingTable) -> tuple[float, int]:
    """Mean cosine between the leading context vector and each sentence."""
    lead = _sentence_vector(table, leading)
    if lead is None:
        return 0.0, len(sentences)
    scores = []
    skipped = 0
    for sentence in sentences:
        vec = _sentence_vector(table, sentence)
        if vec is None:
            skipped += 1
            continue
        scores.append(_cos(lead, vec))
    return (float(np.mean(scores)) if scores else 0.0), skipped


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

TSV_COLUMNS = ["model", "ablation", "ppl", "rouge1", "rouge2", "rougeL",
               "bleu1", "bleu2", "lr2", "d4", "coherence", "relevance"]


@dataclass
class MetricReport:
    model: str = "model"
    ablation: str = "full"
    ppl: Optional[float] = None
    rouge1: float = 0.0
    rouge2: float = 0.0
    rougeL: float = 0.0
    rouge1_recall: float = 0.0
    rouge2_recall: float = 0.0
    bleu1: float = 0.0
    bleu2: float = 0.0
    lr2: float = 0.0
    d4: float = 0.0
    intra_repetition: list[float] = field(default_factory=list)
    intra_repetition_aggregate: float = 0.0
    coherence: dict[str, float] = field(default_factory=dict)
    relevance: dict[str, float] = field(default_factory=dict)
    skipped_sentences: int = 0

    def to_json(self) -> str:
        payload = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))

    def tsv_row(self) -> str:
        def fmt(x):
            return "-" if x is None else f"{x:.4f}" if isinstance(x, float) else str(x)
        coh = float(np.mean(list(self.coherence.values()))) if self.coherence else None
        rel = float(np.mean(list(self.relevance.values()))) if self.relevance else None
        cells = [self.model, self.ablation, fmt(self.ppl), fmt(self.rouge1),
                 fmt(self.rouge2), fmt(self.rougeL), fmt(self.bleu1),
                 fmt(self.bleu2), fmt(self.lr2), fmt(self.d4), fmt(coh), fmt(rel)]
        return "\t".join(cells)


def evaluate_generated(candidates: list[str], references: list[str],
                       leadings: list[str],
                       tables: Optional[dict[str, EmbeddingTable]] = None,
                       model: str = "model", ablation: str = "full",
                       smooth_bleu: bool = False) -> MetricReport:
    """Score one generated corpus against its references."""
    _check_paired(candidates, references)
    report = MetricReport(model=model, ablation=ablation)
    report.rouge1 = rouge_n(candidates, references, 1)
    report.rouge2 = rouge_n(candidates, references, 2)
    report.rougeL = rouge_l(candidates, references)
    report.rouge1_recall = rouge_n(candidates, references, 1, mode="recall")
    report.rouge2_recall = rouge_n(candidates, references, 2, mode="recall")
    report.bleu1 = bleu_n(candidates, references, 1, smooth=smooth_bleu)
    report.bleu2 = bleu_n(candidates, references, 2, smooth=smooth_bleu)
    report.lr2 = lexical_repetition_n(candidates, 2)
    report.d4 = distinct_n(candidates, 4)

    per_index: dict[int, list[float]] = {}
    for leading, cand in zip(leadings, candidates):
        story_sentences = [leading] + split_story_text(cand)
        if len(story_sentences) < 2:
            continue
        scores, _ = intra_story_repetition(story_sentences)
        for i, score in enumerate(scores, start=2):
            per_index.setdefault(i, []).append(score)
    report.intra_repetition = [float(np.mean(per_index[i]))
                               for i in sorted(per_index)]
    if report.intra_repetition:
        flat = [s for scores in per_index.values() for s in scores]
        report.intra_repetition_aggregate = float(np.mean(flat))

    for name, table in (tables or {}).items():
        coh_scores, rel_scores, skipped = [], [], 0
        for leading, cand in zip(leadings, candidates):
            sentences = split_story_text(cand)
            if not sentences:
                continue
            c, s1 = intra_story_coherence(sentences, table)
            r, s2 = intra_story_relevance(leading, sentences, table)
            coh_scores.append(c)
            rel_scores.append(r)
            skipped += s1 + s2
        report.coherence[name] = float(np.mean(coh_scores)) if coh_scores else 0.0
        report.relevance[name] = float(np.mean(rel_scores)) if rel_scores else 0.0
        report.skipped_sentences += skipped
    return report


def split_story_text(text: str) -> list[str]:
    """Sentence boundaries for generated text (same rule as preprocessing)."""
    from .corpus import split_sentences
    return split_sentences(text)


def write_report_tsv(path, reports: list[MetricReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(TSV_COLUMNS) + "\n")
        for report in reports:
            fh.write(report.tsv_row() + "\n")


def write_repetition_series(path, report: MetricReport) -> None:
    """Sentence-index repetition curve, one row per story sentence index."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("sentence_index\tmean_repetition\n")
        for i, value in enumerate(report.intra_repetition, start=2):
            fh.write(f"{i}\t{value:.6f}\n")
