import json
from pathlib import Path

import numpy as np
import pytest

from parse_embed_adapter import AdapterError, backends, cli, formats

# the consuming toolkit, used only through its public file formats
from storylab import corpus as primary_corpus
from storylab import events as primary_events


def write_stories(path, stories):
    with open(path, "w", encoding="utf-8") as fh:
        for story_id, sentences in stories:
            fh.write(json.dumps({"story_id": story_id,
                                 "sentences": sentences}) + "\n")


def run(argv):
    return cli.main([str(a) for a in argv])


class TestRulesParser:
    def test_simple_transitive_sentence(self):
        tokens = backends.rules_parse("He missed his dog .")
        by_form = {form: (lemma, upos, head, rel)
                   for form, lemma, upos, head, rel in tokens}
        assert by_form["missed"] == ("miss", "VERB", 0, "root")
        assert by_form["He"][3] == "nsubj"
        assert by_form["dog"][3] == "dobj"

    def test_open_complement(self):
        tokens = backends.rules_parse("He wanted to find it .")
        rels = {form: (head, rel) for form, _, _, head, rel in tokens}
        assert rels["wanted"] == (0, "root")
        assert rels["find"] == (2, "xcomp")
        assert rels["to"] == (4, "aux")  # attaches to "find", 1-based

    def test_negation(self):
        tokens = backends.rules_parse("The dog did not come .")
        rels = {form: rel for form, _, _, _, rel in tokens}
        assert rels["not"] == "neg" and rels["did"] == "aux"
        assert rels["come"] == "root"

    def test_copular_clause(self):
        tokens = backends.rules_parse("The day was long .")
        rels = {form: (head, rel) for form, _, _, head, rel in tokens}
        assert rels["long"] == (0, "root")
        assert rels["was"][1] == "cop"

    def test_exactly_one_root_always(self):
        sentences = ["Ken kept a sock at home .", "She found the sock there .",
                     "Everyone ate it quickly .", "It seemed very sad .",
                     "[MALE] saw the dog at the lake ."]
        for sentence in sentences:
            tokens = backends.rules_parse(sentence)
            assert sum(1 for t in tokens if t[3] == 0) == 1, sentence


class TestHashEmbedder:
    def test_duplicate_sentences_identical_vectors(self):
        embed, dim = backends.get_embedder("hash", "16")
        out = embed(["the dog ran .", "the dog ran ."])
        assert out.shape == (2, 16)
        assert np.array_equal(out[0], out[1])

    def test_deterministic_across_processes(self):
        embed_a, _ = backends.get_embedder("hash", "8")
        embed_b, _ = backends.get_embedder("hash", "8")
        assert np.array_equal(embed_a(["a cat sat ."]), embed_b(["a cat sat ."]))

    def test_unit_norm(self):
        embed, _ = backends.get_embedder("hash", "32")
        out = embed(["some words here"])
        assert np.linalg.norm(out[0]) == pytest.approx(1.0, abs=1e-9)


class TestBackendErrors:
    def test_unknown_backends(self):
        with pytest.raises(AdapterError, match="unknown parse backend"):
            backends.get_parser("tea-leaves", None)
        with pytest.raises(AdapterError, match="unknown embedding backend"):
            backends.get_embedder("tea-leaves", None)

    def test_missing_heavy_backend_mentions_install(self, monkeypatch):
        import sys
        # a None entry makes `import x` raise ImportError without touching
        # whatever happens to be installed
        monkeypatch.setitem(sys.modules, "spacy", None)
        monkeypatch.setitem(sys.modules, "sentence_transformers", None)
        with pytest.raises(AdapterError, match="install"):
            backends.get_parser("spacy", None)
        with pytest.raises(AdapterError, match="install"):
            backends.get_embedder("sbert", None)


class TestParseCommand:
    def test_round_trip_through_primary_reader(self, tmp_path):
        stories = [("s1", ["He missed his dog .", "She found the sock there ."]),
                   ("s2", ["The day was long ."])]
        write_stories(tmp_path / "stories.jsonl", stories)
        assert run(["parse", "--in", tmp_path / "stories.jsonl",
                    "--out", tmp_path / "parses", "--backend", "rules"]) == 0
        files = sorted((tmp_path / "parses").glob("*.conllu"))
        assert [f.name for f in files] == ["s1.conllu", "s2.conllu"]
        docs = primary_events.read_story_docs(files[0].read_text())
        assert docs[0][0] == "s1" and len(docs[0][1]) == 2
        manifest = json.loads(
            (tmp_path / "parses" / "adapter_manifest.json").read_text())
        assert manifest["backend"] == "rules"

    def test_empty_story_list_writes_no_files(self, tmp_path):
        (tmp_path / "stories.jsonl").write_text("")
        assert run(["parse", "--in", tmp_path / "stories.jsonl",
                    "--out", tmp_path / "parses"]) == 0
        assert list((tmp_path / "parses").glob("*.conllu")) == []

    def test_validator_rejects_malformed_file(self, tmp_path):
        bad = tmp_path / "bad.conllu"
        bad.write_text("# story_id = x\n1\tword\tword\tNOUN\t_\t_\t5\tdep\t_\t_\n")
        with pytest.raises(AdapterError, match="head beyond|roots"):
            formats.validate_conllu(bad)


class TestEmbedCommand:
    def test_file_shape_and_primary_consumption(self, tmp_path):
        stories = [("s1", ["the dog ran .", "the dog came home .",
                           "everyone smiled ."])]
        write_stories(tmp_path / "stories.jsonl", stories)
        out = tmp_path / "sent.tsv"
        assert run(["embed", "--in", tmp_path / "stories.jsonl",
                    "--out", out, "--backend", "hash", "--model", "24"]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + 3  # header + one row per sentence
        table = primary_corpus.EmbeddingTable()
        table.load_sentence_embeddings(out)
        assert table.sentences[("s1", 0)].shape == (24,)

    def test_manifest_records_backend_and_dim(self, tmp_path):
        write_stories(tmp_path / "stories.jsonl", [("s1", ["a ."])])
        out = tmp_path / "sent.tsv"
        assert run(["embed", "--in", tmp_path / "stories.jsonl",
                    "--out", out, "--backend", "hash", "--model", "8"]) == 0
        manifest = json.loads(Path(str(out) + ".manifest.json").read_text())
        assert manifest["dim"] == 8 and manifest["backend"] == "hash"


class TestSecondaryAcceptance:
    """Adapter outputs feed the primary toolkit through its file formats."""

    def test_root_of_missed_sentence_and_round_trip(self, tmp_path):
        write_stories(tmp_path / "stories.jsonl",
                      [("probe", ["He missed his dog ."])])
        assert run(["parse", "--in", tmp_path / "stories.jsonl",
                    "--out", tmp_path / "parses"]) == 0
        text = (tmp_path / "parses" / "probe.conllu").read_text()
        (sentence,) = primary_events.parse_conllu(text)
        (root,) = [t for t in sentence if t.head == 0]
        assert root.form == "missed"
        event = primary_events.extract_event(sentence)
        assert event.surface == "missed dog"
        print("PASS adapter-parse-round-trip (root 'missed')")

    def test_similarity_matrix_from_adapter_embeddings(self, tmp_path):
        sentences = ["the dog ran away .", "he looked around the park .",
                     "the dog came back home ."]
        write_stories(tmp_path / "stories.jsonl",
                      [("s1", ["A boy had a dog ."] + sentences)])
        out = tmp_path / "sent.tsv"
        assert run(["embed", "--in", tmp_path / "stories.jsonl",
                    "--out", out, "--backend", "hash", "--model", "32"]) == 0

        table = primary_corpus.EmbeddingTable()
        table.load_sentence_embeddings(out)
        record = primary_corpus.StoryRecord(
            story_id="s1", leading_text="A boy had a dog .",
            sentence_texts=sentences, leading_ids=[1],
            sentence_ids=[[1]] * 3, event_text="<e_s> <e_e>", event_ids=[4])
        annotated = primary_corpus.annotate_similarity(record, table)
        assert np.array_equal(annotated.sim, annotated.sim.T)
        assert np.max(np.abs(np.diag(annotated.sim) - 1.0)) < 1e-6
        assert np.all(np.abs(annotated.sim) <= 1.0 + 1e-12)
        print("PASS adapter-embeddings-similarity (symmetric, unit diagonal)")
