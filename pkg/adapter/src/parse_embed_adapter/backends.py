"""Pluggable parser and embedding backends.

Two of each: an external heavyweight backend (spacy / sentence-transformers,
loaded by name, never vendored) and a deterministic built-in ("rules" /
"hash") so the pipeline can be exercised offline. The built-ins are
deliberately simple; anything beyond demo corpora should use the external
backends.
"""
from __future__ import annotations

import hashlib
import re

import numpy as np

from . import AdapterError

Token = tuple[str, str, str, int, str]  # form, lemma, upos, head, deprel


# ---------------------------------------------------------------------------
# rule-based shallow parser
# ---------------------------------------------------------------------------

DETS = {"a", "an", "the", "this", "that", "these", "those"}
POSS = {"his", "her", "my", "your", "their", "its", "our"}
PRONOUNS = {"he", "she", "it", "they", "i", "we", "you", "him", "them",
            "everyone", "someone", "nobody", "something", "nothing"}
AUXILIARIES = {"is", "am", "are", "was", "were", "be", "been", "being", "did",
               "do", "does", "done", "had", "has", "have", "could", "would",
               "should", "will", "can", "may", "might", "must"}
PREPOSITIONS = {"in", "on", "at", "by", "with", "for", "of", "from", "to",
                "near", "around", "over", "under", "into", "onto"}
ADVERBS = {"very", "there", "here", "back", "out", "again", "never", "not",
           "fast", "quickly", "slowly", "instead", "soon", "away", "home"}
ADJECTIVES = {"little", "big", "old", "new", "red", "blue", "sad", "happy",
              "angry", "easy", "hard", "long", "short", "fine", "great",
              "quiet", "lost", "late", "early", "hungry"}
VERBS = {"missed", "miss", "saw", "see", "sees", "found", "find", "finds",
         "walked", "walk", "walks", "ran", "run", "runs", "made", "make",
         "makes", "ate", "eat", "eats", "wanted", "want", "wants", "tried",
         "try", "tries", "looked", "look", "looks", "turned", "turn", "turns",
         "seemed", "seem", "seems", "came", "come", "comes", "went", "go",
         "goes", "got", "get", "gets", "kept", "keep", "keeps", "loved",
         "love", "loves", "lived", "live", "lives", "stayed", "stay",
         "smelled", "smell", "called", "call", "fixed", "fix", "woke", "wake",
         "knew", "know", "played", "play", "notices", "notice", "noticed",
         "dropped", "drop", "opened", "open", "checked", "check"}
IRREGULAR_LEMMAS = {
    "missed": "miss", "saw": "see", "sees": "see", "found": "find",
    "walked": "walk", "ran": "run", "runs": "run", "made": "make",
    "ate": "eat", "wanted": "want", "tried": "try", "looked": "look",
    "turned": "turn", "turns": "turn", "seemed": "seem", "came": "come",
    "went": "go", "got": "get", "kept": "keep", "loved": "love",
    "lived": "live", "stayed": "stay", "smelled": "smell", "called": "call",
    "fixed": "fix", "woke": "wake", "knew": "know", "was": "be", "were": "be",
    "is": "be", "am": "be", "are": "be", "been": "be", "did": "do",
    "had": "have", "has": "have", "notices": "notice", "noticed": "notice",
    "checked": "check", "dropped": "drop", "opened": "open",
}


def _lemma(word: str) -> str:
    low = word.lower()
    if low in IRREGULAR_LEMMAS:
        return IRREGULAR_LEMMAS[low]
    if low.endswith("ies") and len(low) > 4:
        return low[:-3] + "y"
    if low.endswith("ed") and len(low) > 4:
        stem = low[:-2]
        return stem[:-1] if stem.endswith(stem[-1] * 2) else stem
    if low.endswith("ing") and len(low) > 5:
        return low[:-3]
    if low.endswith("s") and not low.endswith("ss") and len(low) > 3:
        return low[:-1]
    return low


def _tokenize(sentence: str) -> list[str]:
    return re.findall(r"\[[A-Z]+\]|[A-Za-z']+|[^\sA-Za-z']", sentence)


def _tag(tokens: list[str]) -> list[str]:
    tags = []
    for i, tok in enumerate(tokens):
        low = tok.lower()
        if re.fullmatch(r"\[[A-Z]+\]", tok):
            tags.append("PROPN")
        elif not tok[0].isalpha() and not tok[0] == "'":
            tags.append("PUNCT")
        elif low == "to":
            tags.append("PART")
        elif low == "not":
            tags.append("PART")
        elif low in DETS or low in POSS:
            tags.append("DET")
        elif low in PRONOUNS:
            tags.append("PRON")
        elif low in AUXILIARIES:
            tags.append("AUX")
        elif low in VERBS:
            tags.append("VERB")
        elif low in PREPOSITIONS:
            tags.append("ADP")
        elif low in ADVERBS or low.endswith("ly"):
            tags.append("ADV")
        elif low in ADJECTIVES:
            tags.append("ADJ")
        elif tok[0].isupper() and i > 0:
            tags.append("PROPN")
        else:
            tags.append("NOUN")
    return tags


def rules_parse(sentence: str) -> list[Token]:
    """Deterministic shallow parse of a simple declarative sentence.

    Intended for demo corpora: one finite verb as root, left nominals as
    subjects, right nominals as objects, 'to VERB' as an open complement.
    """
    forms = _tokenize(sentence)
    if not forms:
        raise AdapterError(f"cannot parse empty sentence {sentence!r}")
    tags = _tag(forms)
    n = len(forms)
    root = next((i for i, t in enumerate(tags) if t == "VERB"), None)
    copular = False
    if root is None:
        # copular clause: last ADJ/NOUN after an auxiliary becomes the root
        aux_idx = next((i for i, t in enumerate(tags) if t == "AUX"), None)
        if aux_idx is not None:
            nominal = [i for i in range(aux_idx + 1, n)
                       if tags[i] in ("ADJ", "NOUN", "PROPN")]
            if nominal:
                root = nominal[-1]
                copular = True
        if root is None:
            root = next((i for i, t in enumerate(tags)
                         if t in ("NOUN", "PROPN", "ADJ")), 0)

    heads = [root + 1] * n
    rels = ["dep"] * n
    heads[root], rels[root] = 0, "root"

    def attach(i, head, rel):
        heads[i], rels[i] = head + 1, rel

    subject_taken = False
    obj_taken = False
    xcomp_at = None
    for i in range(n):
        if i == root:
            continue
        tag, low = tags[i], forms[i].lower()
        if tag == "PUNCT":
            attach(i, root, "punct")
        elif low == "not":
            attach(i, root if xcomp_at is None else xcomp_at, "neg")
        elif tag == "PART":  # "to"
            nxt = i + 1
            if nxt < n and tags[nxt] == "VERB":
                attach(i, nxt, "aux")
            else:
                attach(i, root, "dep")
        elif tag == "AUX":
            attach(i, root, "cop" if copular else "aux")
        elif tag == "DET":
            nominal = next((j for j in range(i + 1, n)
                            if tags[j] in ("NOUN", "PROPN")), None)
            attach(i, nominal if nominal is not None else root,
                   "poss" if low in POSS else "det")
        elif tag == "ADP":
            attach(i, root if xcomp_at is None else xcomp_at, "prep")
        elif tag == "VERB":
            if i > root:
                attach(i, root, "xcomp")
                xcomp_at = i
            else:
                attach(i, root, "aux")
        elif tag in ("NOUN", "PROPN", "PRON"):
            prev_adp = next((j for j in range(i - 1, -1, -1)
                             if tags[j] not in ("DET", "ADJ")), None)
            if i < root and not subject_taken:
                attach(i, root, "nsubj")
                subject_taken = True
            elif prev_adp is not None and tags[prev_adp] == "ADP":
                attach(i, prev_adp, "pobj")
            elif not obj_taken:
                attach(i, xcomp_at if xcomp_at is not None else root, "dobj")
                obj_taken = True
            else:
                attach(i, root, "dep")
        elif tag == "ADJ":
            nominal = next((j for j in range(i + 1, n)
                            if tags[j] in ("NOUN", "PROPN")), None)
            if nominal is not None:
                attach(i, nominal, "amod")
            else:
                attach(i, root, "acomp")
        elif tag == "ADV":
            attach(i, root, "advmod")
    return [(forms[i], _lemma(forms[i]) if tags[i] != "PROPN" else forms[i],
             tags[i], heads[i], rels[i]) for i in range(n)]


# ---------------------------------------------------------------------------
# spacy parser wrapper
# ---------------------------------------------------------------------------


def load_spacy_backend(model_name: str):
    try:
        import spacy
    except ImportError as exc:
        raise AdapterError(
            "spacy backend requested but spacy is not installed; "
            "pip install 'parse-embed-adapter[spacy]' and download a model, "
            "e.g. python -m spacy download en_core_web_sm") from exc
    try:
        nlp = spacy.load(model_name)
    except OSError as exc:
        raise AdapterError(
            f"spacy model {model_name!r} is not available; install it with "
            f"python -m spacy download {model_name}") from exc

    def parse(sentence: str) -> list[Token]:
        doc = nlp(sentence)
        tokens = []
        for tok in doc:
            head = 0 if tok.head is tok else tok.head.i + 1
            tokens.append((tok.text, tok.lemma_, tok.pos_, head, tok.dep_))
        return tokens

    return parse


def get_parser(backend: str, model_name: str | None):
    if backend == "rules":
        return rules_parse
    if backend == "spacy":
        return load_spacy_backend(model_name or "en_core_web_sm")
    raise AdapterError(f"unknown parse backend {backend!r}; "
                       f"choose 'rules' or 'spacy'")


# ---------------------------------------------------------------------------
# embedding backends
# ---------------------------------------------------------------------------


def hash_embed(dim: int):
    """Deterministic hashed bag-of-words embedding, L2-normalized."""
    if dim < 1:
        raise AdapterError(f"hash embedding dimension must be >= 1, got {dim}")

    def word_vector(word: str) -> np.ndarray:
        digest = hashlib.sha256(word.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        return np.random.default_rng(seed).normal(0.0, 1.0, size=dim)

    def embed(sentences: list[str], batch_size: int = 32) -> np.ndarray:
        out = np.zeros((len(sentences), dim))
        for i, sentence in enumerate(sentences):
            words = re.findall(r"\[[A-Z]+\]|[a-z0-9']+", sentence.lower()
                               .replace("[male]", "[MALE]")
                               .replace("[female]", "[FEMALE]")
                               .replace("[neutral]", "[NEUTRAL]"))
            vec = (np.mean([word_vector(w) for w in words], axis=0)
                   if words else word_vector(""))
            norm = np.linalg.norm(vec)
            out[i] = vec / norm if norm > 0 else vec
        return out

    return embed, dim


def load_sbert_backend(model_name: str):
    try:
        from sentence_transformers import SentenceTransformer
    except ImportError as exc:
        raise AdapterError(
            "sbert backend requested but sentence-transformers is not "
            "installed; pip install 'parse-embed-adapter[sbert]'") from exc
    try:
        encoder = SentenceTransformer(model_name)
    except Exception as exc:  # model download/load failures
        raise AdapterError(f"could not load sentence-embedding model "
                           f"{model_name!r}: {exc}") from exc
    dim = encoder.get_sentence_embedding_dimension()

    def embed(sentences: list[str], batch_size: int = 32) -> np.ndarray:
        return np.asarray(encoder.encode(sentences, batch_size=batch_size,
                                         show_progress_bar=False))

    return embed, dim


def get_embedder(backend: str, model_name: str | None):
    if backend == "hash":
        return hash_embed(int(model_name or 64))
    if backend == "sbert":
        return load_sbert_backend(model_name or "all-MiniLM-L6-v2")
    raise AdapterError(f"unknown embedding backend {backend!r}; "
                       f"choose 'hash' or 'sbert'")
