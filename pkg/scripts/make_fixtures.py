#!/usr/bin/env python3
"""Regenerate the bundled toy corpus under tests/fixtures/toy/.

Stories are assembled from sentence templates that carry hand-written
dependency annotations, so the CoNLL-U fixtures are correct by construction
and stay in lockstep with the story text. Deterministic: same seed, same
bytes.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from storylab import corpus  # noqa: E402

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "toy"

NAMES = [("Ken", "m"), ("Mia", "f"), ("Tom", "m"), ("Lena", "f")]
PETS = ["dog", "cat", "bird", "frog"]
OBJECTS = ["ball", "stick", "sock", "kite"]
PLACES = ["park", "yard", "store", "lake"]
FOODS = ["soup", "bread", "cake", "rice"]

# (form, lemma, upos, head, deprel); slot forms start with '{'
REFERENCE_TEMPLATES = {
    "missed": [("{S}", "{S}", "PROPN", 2, "nsubj"),
               ("missed", "miss", "VERB", 0, "root"),
               ("the", "the", "DET", 4, "det"),
               ("{pet}", "{pet}", "NOUN", 2, "dobj"),
               (".", ".", "PUNCT", 2, "punct")],
    "walked": [("He", "he", "PRON", 2, "nsubj"),
               ("walked", "walk", "VERB", 0, "root"),
               ("to", "to", "ADP", 2, "prep"),
               ("the", "the", "DET", 5, "det"),
               ("{place}", "{place}", "NOUN", 3, "pobj"),
               (".", ".", "PUNCT", 2, "punct")],
    "found": [("She", "she", "PRON", 2, "nsubj"),
              ("found", "find", "VERB", 0, "root"),
              ("the", "the", "DET", 4, "det"),
              ("{object}", "{object}", "NOUN", 2, "dobj"),
              ("there", "there", "ADV", 2, "advmod"),
              (".", ".", "PUNCT", 2, "punct")],
    "not_come": [("The", "the", "DET", 2, "det"),
                 ("{pet}", "{pet}", "NOUN", 5, "nsubj"),
                 ("did", "do", "AUX", 5, "aux"),
                 ("not", "not", "PART", 5, "neg"),
                 ("come", "come", "VERB", 0, "root"),
                 ("back", "back", "ADV", 5, "prt"),
                 (".", ".", "PUNCT", 5, "punct")],
    "wanted_find": [("{S}", "{S}", "PROPN", 2, "nsubj"),
                    ("wanted", "want", "VERB", 0, "root"),
                    ("to", "to", "PART", 4, "aux"),
                    ("find", "find", "VERB", 2, "xcomp"),
                    ("it", "it", "PRON", 4, "dobj"),
                    (".", ".", "PUNCT", 2, "punct")],
    "looked_around": [("They", "they", "PRON", 2, "nsubj"),
                      ("looked", "look", "VERB", 0, "root"),
                      ("around", "around", "ADP", 2, "prt"),
                      ("the", "the", "DET", 5, "det"),
                      ("{place}", "{place}", "NOUN", 3, "pobj"),
                      (".", ".", "PUNCT", 2, "punct")],
    "seemed_sad": [("It", "it", "PRON", 2, "nsubj"),
                   ("seemed", "seem", "VERB", 0, "root"),
                   ("very", "very", "ADV", 4, "advmod"),
                   ("sad", "sad", "ADJ", 2, "acomp"),
                   (".", ".", "PUNCT", 2, "punct")],
    "made_food": [("{S}", "{S}", "PROPN", 2, "nsubj"),
                  ("made", "make", "VERB", 0, "root"),
                  ("{food}", "{food}", "NOUN", 2, "dobj"),
                  ("for", "for", "ADP", 2, "prep"),
                  ("dinner", "dinner", "NOUN", 4, "pobj"),
                  (".", ".", "PUNCT", 2, "punct")],
    "smelled_great": [("The", "the", "DET", 2, "det"),
                      ("{food}", "{food}", "NOUN", 3, "nsubj"),
                      ("smelled", "smell", "VERB", 0, "root"),
                      ("great", "great", "ADJ", 3, "acomp"),
                      (".", ".", "PUNCT", 3, "punct")],
    "ate_it": [("Everyone", "everyone", "PRON", 2, "nsubj"),
               ("ate", "eat", "VERB", 0, "root"),
               ("it", "it", "PRON", 2, "dobj"),
               ("quickly", "quickly", "ADV", 2, "advmod"),
               (".", ".", "PUNCT", 2, "punct")],
    "saw_pet": [("{S}", "{S}", "PROPN", 2, "nsubj"),
                ("saw", "see", "VERB", 0, "root"),
                ("the", "the", "DET", 4, "det"),
                ("{pet}", "{pet}", "NOUN", 2, "dobj"),
                ("at", "at", "ADP", 2, "prep"),
                ("the", "the", "DET", 7, "det"),
                ("{place}", "{place}", "NOUN", 5, "pobj"),
                (".", ".", "PUNCT", 2, "punct")],
    "turned_out": [("It", "it", "PRON", 2, "nsubj"),
                   ("turned", "turn", "VERB", 0, "root"),
                   ("out", "out", "ADP", 2, "prt"),
                   ("fine", "fine", "ADJ", 2, "acomp"),
                   (".", ".", "PUNCT", 2, "punct")],
    "was_lost": [("The", "the", "DET", 2, "det"),
                 ("{object}", "{object}", "NOUN", 4, "nsubjpass"),
                 ("was", "be", "AUX", 4, "auxpass"),
                 ("lost", "lose", "VERB", 0, "root"),
                 (".", ".", "PUNCT", 4, "punct")],
    "tried_fix": [("He", "he", "PRON", 2, "nsubj"),
                  ("tried", "try", "VERB", 0, "root"),
                  ("to", "to", "PART", 4, "aux"),
                  ("fix", "fix", "VERB", 2, "xcomp"),
                  ("it", "it", "PRON", 4, "dobj"),
                  (".", ".", "PUNCT", 2, "punct")],
    "was_long": [("The", "the", "DET", 2, "det"),
                 ("day", "day", "NOUN", 4, "nsubj"),
                 ("was", "be", "AUX", 4, "cop"),
                 ("long", "long", "ADJ", 0, "root"),
                 (".", ".", "PUNCT", 4, "punct")],
}

LEADING_TEMPLATES = [
    "{Name} had a little {pet} .",
    "{Name} lived near the {place} .",
    "{Name} loved {food} .",
    "{Name} kept a {object} at home .",
]


def fill(text: str, slots: dict) -> str:
    for key, value in slots.items():
        text = text.replace("{" + key + "}", value)
    return text


def render_sentence(template_key: str, slots: dict):
    tokens = []
    for form, lemma, upos, head, deprel in REFERENCE_TEMPLATES[template_key]:
        form = fill(form, slots)
        lemma = fill(lemma, slots)
        tokens.append((form, lemma, upos, head, deprel))
    text = " ".join(t[0] for t in tokens)
    return text, tokens


def build_stories(rng, n_stories: int, prefix: str):
    template_keys = sorted(REFERENCE_TEMPLATES)
    stories = []
    for i in range(n_stories):
        name, gender = NAMES[int(rng.integers(0, len(NAMES)))]
        slots = {
            "Name": name,
            "S": "[MALE]" if gender == "m" else "[FEMALE]",
            "pet": PETS[int(rng.integers(0, len(PETS)))],
            "object": OBJECTS[int(rng.integers(0, len(OBJECTS)))],
            "place": PLACES[int(rng.integers(0, len(PLACES)))],
            "food": FOODS[int(rng.integers(0, len(FOODS)))],
        }
        leading_raw = fill(LEADING_TEMPLATES[int(rng.integers(0, 4))], slots)
        n_ref = int(rng.integers(3, 5))
        chosen = list(rng.choice(template_keys, size=n_ref, replace=False))
        parsed = [render_sentence(key, slots) for key in chosen]
        stories.append({
            "story_id": f"{prefix}{i:03d}",
            "raw_sentences": [leading_raw] + [text for text, _ in parsed],
            "reference_parses": [tokens for _, tokens in parsed],
        })
    return stories


def conllu_block(story_id, parses, texts):
    lines = [f"# story_id = {story_id}"]
    for tokens, text in zip(parses, texts):
        lines.append(f"# text = {text}")
        for idx, (form, lemma, upos, head, deprel) in enumerate(tokens, start=1):
            lines.append(f"{idx}\t{form}\t{lemma}\t{upos}\t_\t_\t{head}\t{deprel}\t_\t_")
        lines.append("")
    return "\n".join(lines) + "\n"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(42)

    stories = build_stories(rng, 32, "toy")
    with open(OUT / "stories.jsonl", "w", encoding="utf-8") as fh:
        for story in stories:
            fh.write(json.dumps({"story_id": story["story_id"],
                                 "sentences": story["raw_sentences"]}) + "\n")

    vocab_words = set()
    with open(OUT / "stories.conllu", "w", encoding="utf-8") as fh:
        for story in stories:
            delex_refs = [corpus.delexicalize(s) for s in story["raw_sentences"][1:]]
            fh.write(conllu_block(story["story_id"], story["reference_parses"],
                                  delex_refs))
            for sentence in story["raw_sentences"]:
                vocab_words.update(w if w.startswith("[") else w.lower()
                                   for w in corpus.delexicalize(sentence).split())

    # one long synthetic text for post-training (60 sentences)
    book_rng = np.random.default_rng(7)
    template_keys = sorted(REFERENCE_TEMPLATES)
    book_sentences, book_parses = [], []
    for _ in range(60):
        slots = {"S": "[MALE]" if book_rng.random() < 0.5 else "[FEMALE]",
                 "pet": PETS[int(book_rng.integers(0, 4))],
                 "object": OBJECTS[int(book_rng.integers(0, 4))],
                 "place": PLACES[int(book_rng.integers(0, 4))],
                 "food": FOODS[int(book_rng.integers(0, 4))]}
        key = template_keys[int(book_rng.integers(0, len(template_keys)))]
        text, tokens = render_sentence(key, slots)
        book_sentences.append(text)
        book_parses.append(tokens)
        vocab_words.update(w if w.startswith("[") else w.lower()
                           for w in text.split())
    with open(OUT / "book.jsonl", "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"story_id": "book1",
                             "sentences": book_sentences}) + "\n")
    with open(OUT / "book.conllu", "w", encoding="utf-8") as fh:
        fh.write(conllu_block("book1", book_parses, book_sentences))

    vocab_words |= {"[MALE]", "[FEMALE]", "[NEUTRAL]"}
    vec_rng = np.random.default_rng(123)
    with open(OUT / "word_vectors.txt", "w", encoding="utf-8") as fh:
        for word in sorted(vocab_words):
            vec = vec_rng.normal(0.0, 1.0, size=16)
            fh.write(word + " " + " ".join(f"{v:.5f}" for v in vec) + "\n")

    print(f"wrote fixtures for {len(stories)} stories + 1 book to {OUT}")


if __name__ == "__main__":
    main()
