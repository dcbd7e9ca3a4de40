"""Verb-anchored event extraction from dependency parses.

Sentences arrive as CoNLL-U; each one contributes at most one event built
from the root predicate and a small set of its dependents. Adjacent events
across a story's sentences carry an implicit temporal-next relation, which
the corpus-level graph aggregates into counted triples.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

EVENT_START = "<e_s>"
EVENT_SEP = "<e_sep>"
EVENT_END = "<e_e>"
EVENT_NONE = "<e_none>"
RELATION_NEXT = "temporal-next"

SUBJECT_DEPRELS = frozenset({"nsubj", "nsubj:pass", "nsubjpass", "csubj", "csubj:pass"})


class ConlluError(ValueError):
    """Malformed CoNLL-U input; message carries the offending line number."""


@dataclass(frozen=True)
class DepToken:
    index: int          # 1-based position within the sentence
    form: str
    lemma: str
    upos: str
    head: int           # 0 marks the root
    deprel: str


@dataclass(frozen=True)
class RoleMap:
    """Dependency labels accepted for each event argument slot.

    The mod slot additionally accepts adverbial modifiers whose surface form
    is a negator, so "did not go" keeps its polarity.
    """
    mod: frozenset = frozenset({"neg", "prt", "compound:prt"})
    agent: frozenset = frozenset({"agent", "obl:agent"})
    comp: frozenset = frozenset({"obj", "dobj", "xcomp", "ccomp", "acomp", "attr"})
    aux: frozenset = frozenset({"aux", "auxpass", "aux:pass"})
    mod_advmod_forms: frozenset = frozenset({"not", "n't"})


DEFAULT_ROLE_MAP = RoleMap()


@dataclass(frozen=True)
class Event:
    trigger: str
    trigger_pos: int
    mod: Optional[tuple[str, int]] = None
    agent: Optional[tuple[str, int]] = None
    comp: Optional[tuple[str, int]] = None

    @property
    def surface(self) -> str:
        parts = [(self.trigger_pos, self.trigger)]
        for role in (self.mod, self.agent, self.comp):
            if role is not None:
                parts.append((role[1], role[0]))
        return " ".join(text for _, text in sorted(parts))


@dataclass
class EventSequence:
    """One slot per story sentence; a slot is None when no event was found."""
    events: list[Optional[Event]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)

    def surfaces(self) -> list[Optional[str]]:
        return [e.surface if e is not None else None for e in self.events]


@dataclass
class EventGraph:
    triples: Counter = field(default_factory=Counter)

    def total_count(self) -> int:
        return sum(self.triples.values())


# ---------------------------------------------------------------------------
# CoNLL-U ingestion
# ---------------------------------------------------------------------------


def _finish_sentence(tokens: list[DepToken], start_line: int) -> list[DepToken]:
    n = len(tokens)
    roots = [t for t in tokens if t.head == 0]
    if len(roots) != 1:
        raise ConlluError(
            f"sentence starting near line {start_line} has {len(roots)} roots")
    for t in tokens:
        if t.head > n:
            raise ConlluError(
                f"sentence starting near line {start_line}: token {t.index} "
                f"has head {t.head} beyond sentence length {n}")
    return tokens


def parse_conllu(text: str) -> list[list[DepToken]]:
    """Parse CoNLL-U text into one DepToken list per sentence.

    Comment lines, multiword-token ranges, and empty-node ids are skipped.
    """
    sentences: list[list[DepToken]] = []
    current: list[DepToken] = []
    start_line = 1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            if current:
                sentences.append(_finish_sentence(current, start_line))
                current = []
            continue
        if line.startswith("#"):
            continue
        if not current:
            start_line = lineno
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluError(f"line {lineno}: expected 10 tab-separated columns, "
                              f"got {len(cols)}")
        tok_id = cols[0]
        if "-" in tok_id or "." in tok_id:
            continue
        try:
            index = int(tok_id)
            head = int(cols[6])
        except ValueError as exc:
            raise ConlluError(f"line {lineno}: non-integer id or head") from exc
        if index < 1 or head < 0:
            raise ConlluError(f"line {lineno}: id must be >= 1 and head >= 0")
        if head == index:
            raise ConlluError(f"line {lineno}: token {index} heads itself")
        current.append(DepToken(index=index, form=cols[1], lemma=cols[2],
                                upos=cols[3], head=head, deprel=cols[7]))
    if current:
        sentences.append(_finish_sentence(current, start_line))
    return sentences


def read_story_docs(text: str) -> list[tuple[str, list[list[DepToken]]]]:
    """Group CoNLL-U sentences into stories via '# story_id = ...' comments.

    The comment is required on the first sentence of each story and opens a
    new story whenever it appears.
    """
    stories: list[tuple[str, list[list[DepToken]]]] = []
    block_lines: list[str] = []
    block_story: Optional[str] = None

    def flush_block():
        nonlocal block_lines, block_story
        has_tokens = any(l.strip() and not l.startswith("#") for l in block_lines)
        if has_tokens:
            parsed = parse_conllu("\n".join(block_lines) + "\n")
            if block_story is not None:
                stories.append((block_story, []))
            if not stories:
                raise ConlluError("first sentence lacks a '# story_id =' comment")
            stories[-1][1].extend(parsed)
        block_lines = []
        block_story = None

    for raw in text.splitlines():
        if raw.startswith("# story_id"):
            _, _, value = raw.partition("=")
            block_story = value.strip()
        block_lines.append(raw)
        if not raw.strip():
            flush_block()
    flush_block()
    return stories


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------


def _children(sentence: list[DepToken], head_index: int) -> list[DepToken]:
    return [t for t in sentence if t.head == head_index]


def _pick_trigger(sentence: list[DepToken],
                  role_map: RoleMap) -> tuple[Optional[DepToken], Optional[DepToken]]:
    """Locate the anchoring predicate; returns (trigger, copula_or_none)."""
    roots = [t for t in sentence if t.head == 0]
    if len(roots) != 1:
        return None, None
    root = roots[0]
    if root.upos == "VERB":
        return root, None
    kids = _children(sentence, root.index)
    copulas = [t for t in kids if t.deprel == "cop"]
    if root.upos in ("ADJ", "NOUN", "PROPN", "PRON", "NUM") and copulas:
        return root, min(copulas, key=lambda t: abs(t.index - root.index))
    aux_verbs = [t for t in kids
                 if t.deprel in role_map.aux and t.upos in ("VERB", "AUX")]
    if aux_verbs:
        return min(aux_verbs, key=lambda t: abs(t.index - root.index)), None
    return None, None


def _pick_role(children: list[DepToken], trigger_pos: int, deprels: frozenset,
               advmod_forms: frozenset = frozenset()) -> Optional[DepToken]:
    candidates = [t for t in children
                  if t.deprel in deprels
                  or (t.deprel == "advmod" and t.form.lower() in advmod_forms)]
    if not candidates:
        return None
    return min(candidates, key=lambda t: (abs(t.index - trigger_pos), t.index))


def extract_event(sentence: list[DepToken],
                  role_map: RoleMap = DEFAULT_ROLE_MAP) -> Optional[Event]:
    """Build the sentence's event, or None when no predicate anchors one.

    The trigger keeps its (lowercased) surface form; dependents contribute
    lowercased lemmas. Subject dependents are never captured.
    """
    if not sentence:
        return None
    trigger, copula = _pick_trigger(sentence, role_map)
    if trigger is None:
        return None
    kids = _children(sentence, trigger.index)

    def as_pair(tok: Optional[DepToken]) -> Optional[tuple[str, int]]:
        return (tok.lemma.lower(), tok.index) if tok is not None else None

    if copula is not None:
        mod = as_pair(copula)
    else:
        mod = as_pair(_pick_role(kids, trigger.index, role_map.mod,
                                 role_map.mod_advmod_forms))
    return Event(
        trigger=trigger.form.lower(),
        trigger_pos=trigger.index,
        mod=mod,
        agent=as_pair(_pick_role(kids, trigger.index, role_map.agent)),
        comp=as_pair(_pick_role(kids, trigger.index, role_map.comp)),
    )


def extract_sequence(story: Iterable[list[DepToken]],
                     role_map: RoleMap = DEFAULT_ROLE_MAP) -> EventSequence:
    return EventSequence([extract_event(sentence, role_map) for sentence in story])


def serialize_surfaces(surfaces: list[Optional[str]]) -> str:
    filled = [s if s is not None else EVENT_NONE for s in surfaces]
    if not filled:
        return f"{EVENT_START} {EVENT_END}"
    return f"{EVENT_START} " + f" {EVENT_SEP} ".join(filled) + f" {EVENT_END}"


def serialize_events(seq: EventSequence) -> str:
    return serialize_surfaces(seq.surfaces())


def deserialize_surfaces(text: str) -> list[Optional[str]]:
    """Recover the per-sentence surfaces from a serialized event string."""
    body = text.strip()
    if not body.startswith(EVENT_START) or not body.endswith(EVENT_END):
        raise ValueError(f"not a serialized event sequence: {text!r}")
    body = body[len(EVENT_START):len(body) - len(EVENT_END)].strip()
    if not body:
        return []
    return [None if part.strip() == EVENT_NONE else part.strip()
            for part in body.split(EVENT_SEP)]


def build_event_graph(corpus: Iterable[EventSequence]) -> EventGraph:
    graph = EventGraph()
    for seq in corpus:
        surfaces = seq.surfaces()
        for head, tail in zip(surfaces, surfaces[1:]):
            if head is not None and tail is not None:
                graph.triples[(head, RELATION_NEXT, tail)] += 1
    return graph


# ---------------------------------------------------------------------------
# file surfaces
# ---------------------------------------------------------------------------


def write_events_file(path, stories: list[tuple[str, EventSequence]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for story_id, seq in stories:
            fh.write(f"{story_id}\t{serialize_events(seq)}\n")


def read_events_file(path) -> dict[str, list[Optional[str]]]:
    out: dict[str, list[Optional[str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            story_id, sep, serialized = line.partition("\t")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected story_id<TAB>events")
            out[story_id] = deserialize_surfaces(serialized)
    return out


def write_graph_file(path, graph: EventGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (head, rel, tail) in sorted(graph.triples):
            fh.write(f"{head}\t{rel}\t{tail}\t{graph.triples[(head, rel, tail)]}\n")
