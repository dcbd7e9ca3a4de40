"""Acceptance suite: every criterion as a dedicated test at its stated
tolerance, printing one PASS line per criterion (run with -s to see them).
"""
import json
import math
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from storylab import bpe, cli, corpus, events, metrics, model
from storylab import tensor as T
from gradcheck import check_gradients
from test_events import random_parse

FIXTURES = Path(__file__).parent / "fixtures"
TOY = FIXTURES / "toy"


def ok(name, detail=""):
    print(f"PASS {name}" + (f" ({detail})" if detail else ""))


@pytest.fixture(scope="module")
def toy_data(tmp_path_factory):
    """extract + prepare over the bundled 32-story corpus."""
    root = tmp_path_factory.mktemp("acceptance")
    assert cli.main(["extract", "--conllu", str(TOY / "stories.conllu"),
                     "--out", str(root / "ex")]) == 0
    assert cli.main(["prepare", "--stories", str(TOY / "stories.jsonl"),
                     "--events", str(root / "ex" / "events.tsv"),
                     "--word-vectors", str(TOY / "word_vectors.txt"),
                     "--out", str(root / "data"), "--delex"]) == 0
    vocab = bpe.BpeVocab.load(root / "data" / "vocab.json")
    records = []
    for name in ("train", "dev", "test"):
        records += corpus.read_records_jsonl(root / "data" / f"records_{name}.jsonl")
    records.sort(key=lambda r: r.story_id)
    return root, vocab, records


def overfit_config(vocab, **overrides):
    defaults = dict(vocab_size=len(vocab), model_dim=64, layers=2, heads=4,
                    ffn_dim=128, max_positions=256, max_sentences=10,
                    dropout=0.0, seed=42, batch_size=8, learning_rate=2e-3)
    defaults.update(overrides)
    return model.ModelConfig(**defaults)


class TestGradientIntegrity:
    def test_every_parameter_group_matches_finite_differences(self, toy_data):
        _, vocab, records = toy_data
        started = time.perf_counter()
        cfg = model.ModelConfig(vocab_size=len(vocab), model_dim=8, layers=1,
                                heads=2, ffn_dim=12, max_positions=64,
                                max_sentences=10, dropout=0.0, seed=42,
                                beta=0.1, lam=0.1, delta=0.01)
        state = model.init_model(cfg)
        record = records[0]
        # keep every |sim gap| far from the loss floor so the objective is
        # smooth at the evaluation point
        m = record.m
        sim = np.full((m, m), 0.95)
        np.fill_diagonal(sim, 1.0)
        record.sim = sim

        def build_loss():
            out = model.forward_record(state, record, vocab)
            return model.compute_loss([out], cfg).l_overall

        errors = check_gradients(build_loss, dict(state.param_items()),
                                 h=1e-5, tol=1e-4)
        elapsed = time.perf_counter() - started
        assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s"
        assert max(errors.values()) < 1e-4
        ok("gradient-integrity",
           f"{len(errors)} groups, worst rel err {max(errors.values()):.2e}, "
           f"{elapsed:.1f}s")


class TestFusionCorrectness:
    def test_hand_computed_single_head_case(self):
        cfg = model.ModelConfig(vocab_size=10, model_dim=2, layers=1, heads=1,
                                ffn_dim=4, max_sentences=10, dropout=0.0)
        state = model.init_model(cfg)
        wq = np.array([[0.7, -0.3], [0.2, 0.9]])
        wk = np.array([[0.4, 0.1], [-0.5, 0.6]])
        wv = np.array([[1.1, 0.0], [0.3, -0.8]])
        wm = np.array([[0.9, 0.2], [-0.4, 1.5]])
        state.params["fuse.h0.wq"].data[...] = wq
        state.params["fuse.h0.wk"].data[...] = wk
        state.params["fuse.h0.wv"].data[...] = wv
        state.params["fuse.wm"].data[...] = wm
        f_c = T.Tensor(np.array([[0.5, -1.0], [1.5, 0.25]]))
        f_e = T.Tensor(np.array([[2.0, 1.0]]))

        q = f_e.data @ wq
        k = f_c.data @ wk
        v = f_c.data @ wv
        s = [float(q[0] @ k[i]) / math.sqrt(2.0) for i in range(2)]
        z = max(s)
        e = [math.exp(x - z) for x in s]
        w = [x / sum(e) for x in e]
        expected = (w[0] * v[0] + w[1] * v[1]) @ wm

        f_ca = model.cross_attention_fuse(state, f_c, f_e)
        worst = float(np.max(np.abs(f_ca.data - expected)))
        assert worst < 1e-12
        ok("fusion-hand-case", f"max abs err {worst:.2e}")

    def test_attention_rows_sum_to_one_across_100_random_shapes(self):
        rng = np.random.default_rng(2024)
        checked = 0
        for _ in range(100):
            heads = int(rng.choice([1, 2, 4]))
            dim = int(rng.choice([8, 16]))
            cfg = model.ModelConfig(vocab_size=10, model_dim=dim, layers=1,
                                    heads=heads, ffn_dim=8, max_sentences=10,
                                    dropout=0.0)
            state = model.init_model(cfg)
            f_c = T.Tensor(rng.normal(size=(int(rng.integers(1, 12)), dim)))
            f_e = T.Tensor(rng.normal(size=(int(rng.integers(1, 12)), dim)))
            trace = model.FusionTrace()
            model.cross_attention_fuse(state, f_c, f_e, trace)
            for weights in trace.head_weights:
                assert np.max(np.abs(weights.sum(axis=-1) - 1.0)) < 1e-6
                checked += weights.shape[0]
        ok("fusion-row-normalization", f"{checked} attention rows")


class TestAblationIdentity:
    def test_beta_zero_and_disabled_module_match_plain_concat(self):
        rng = np.random.default_rng(99)
        for trial in range(50):
            dim = int(rng.choice([8, 16]))
            cfg_on = model.ModelConfig(vocab_size=30, model_dim=dim, layers=1,
                                       heads=2, ffn_dim=8, max_sentences=10,
                                       dropout=0.0, seed=int(rng.integers(1000)))
            state = model.init_model(cfg_on)
            c_ids = list(rng.integers(0, 30, size=int(rng.integers(1, 7))))
            e_ids = list(rng.integers(0, 30, size=int(rng.integers(1, 7))))
            f_c, f_e = model.encode(state, c_ids, e_ids)
            f_ca = model.cross_attention_fuse(state, f_c, f_e)
            plain = np.concatenate([f_c.data, f_e.data], axis=0)
            zero_beta = model.ModelConfig(**{**cfg_on.__dict__, "beta": 0.0})
            no_cm = model.ModelConfig(**{**cfg_on.__dict__, "use_cm": False})
            assert np.array_equal(
                model.contextualize(zero_beta, f_c, f_e, f_ca).data, plain)
            assert np.array_equal(
                model.contextualize(no_cm, f_c, f_e, None).data, plain)
        ok("ablation-identity", "50 random inputs, bitwise")


class TestSimilarityHead:
    def test_bitwise_symmetry_100_parameterizations_and_zero_weight(self):
        rng = np.random.default_rng(5)
        cfg = model.ModelConfig(vocab_size=10, model_dim=8, layers=1, heads=2,
                                ffn_dim=8, max_sentences=10, dropout=0.0)
        state = model.init_model(cfg)
        for _ in range(100):
            state.params["sim.wsep"].data[...] = rng.normal(size=(8, 8))
            sep = T.Tensor(rng.normal(size=(int(rng.integers(2, 7)), 8)))
            sim = model.predict_sentence_similarity(sep, state)
            assert np.array_equal(sim.data, sim.data.T)
        state.params["sim.wsep"].data[...] = 0.0
        sim = model.predict_sentence_similarity(
            T.Tensor(rng.normal(size=(4, 8))), state)
        assert np.all(sim.data == 0.5)
        ok("similarity-head", "100 parameterizations symmetric, zero-weight = 0.5")


class TestLossFormulas:
    def test_hand_case_and_lambda_zero(self, toy_data):
        _, vocab, records = toy_data
        sim_true = np.array([[1.0, 0.5], [0.5, 1.0]])
        sim_pred = T.Tensor(np.array([[1.0, 0.2], [0.2, 0.95]]))
        l_sent = model.sentence_similarity_loss(sim_true, sim_pred, delta=0.1)
        # (0.1 + 0.3 + 0.3 + 0.1) / 4: exact up to one ulp of float64 summation
        assert l_sent.item() == pytest.approx(0.2, abs=1e-15)

        cfg = overfit_config(vocab, lam=0.0)
        state = model.init_model(cfg)
        outputs = [model.forward_record(state, r, vocab) for r in records[:3]]
        losses = model.compute_loss(outputs, cfg)
        assert losses.l_overall is losses.l_lm
        ok("loss-formulas", "hand case = 0.2 exactly, lambda=0 collapses")


class TestOverfitSmoke:
    def test_toy_corpus_overfits_in_300_steps_deterministically(self, toy_data):
        _, vocab, records = toy_data
        assert len(records) == 32
        started = time.perf_counter()
        cfg = overfit_config(vocab)
        first = model.train(records, cfg, vocab, epochs=100, max_steps=300)
        second = model.train(records, cfg, vocab, epochs=100, max_steps=300)
        elapsed = time.perf_counter() - started
        final = first.curve[-1]["l_lm"]
        assert final < 0.5, f"l_lm stuck at {final:.3f}"
        assert [r["l_lm"] for r in first.curve] == [r["l_lm"] for r in second.curve]
        assert elapsed < 300.0
        self.__class__.trained_state = first.state
        ok("overfit-smoke", f"l_lm {final:.4f} after 300 steps, "
                            f"two runs identical, {elapsed:.0f}s")


class TestMemorization:
    def test_greedy_reproduces_memorized_stories(self, toy_data):
        _, vocab, records = toy_data
        mem = records[:8]
        cfg = overfit_config(vocab)
        result = model.train(mem, cfg, vocab, epochs=1000, max_steps=350)
        hits = 0
        for record in mem:
            out = model.generate(result.state, vocab, record.leading_text,
                                 record.event_text, strategy="greedy",
                                 max_new_tokens=150)
            reference = " ".join(" ".join(s.split()) for s in record.sentence_texts)
            hits += int(out.text == reference)
        assert hits >= 6, f"only {hits}/8 stories reproduced"
        ok("memorization", f"{hits}/8 verbatim")


class TestEventExtraction:
    def test_printed_story_sequence(self):
        docs = dict(events.read_story_docs((FIXTURES / "table5.conllu").read_text()))
        seq = events.extract_sequence(docs["table5"])
        assert seq.surfaces() == ["missed dog", "notices something",
                                  "sees dog", "turns out be"]
        ok("event-extraction-printed-story")

    def test_hand_traced_fixture_is_byte_identical(self, tmp_path):
        assert cli.main(["extract", "--conllu",
                         str(FIXTURES / "handtrace20.conllu"),
                         "--out", str(tmp_path)]) == 0
        assert (tmp_path / "events.tsv").read_bytes() == \
            (FIXTURES / "handtrace20.events.golden.tsv").read_bytes()
        ok("event-extraction-golden-bytes")

    def test_no_subject_token_in_1000_fuzzed_parses(self):
        rng = np.random.default_rng(4242)
        extracted = 0
        for _ in range(1000):
            sentence = random_parse(rng)
            event = events.extract_event(sentence)
            if event is None:
                continue
            extracted += 1
            banned = set()
            for t in sentence:
                if t.deprel in events.SUBJECT_DEPRELS:
                    banned.add(t.form.lower())
                    banned.add(t.lemma.lower())
            assert not banned & set(event.surface.split())
        ok("event-extraction-subject-exclusion", f"{extracted} events fuzzed")


class TestMetricOracles:
    def test_bleu_ppl_distinct_hand_values(self):
        assert metrics.bleu_n(["a b c"], ["a b d"], 1) == pytest.approx(2 / 3,
                                                                        abs=1e-12)
        probs = [0.5, 0.25, 0.125]
        ppl = metrics.perplexity_from_logprobs([math.log(p) for p in probs])
        assert ppl == pytest.approx(4.0, abs=1e-9)
        assert metrics.distinct_n(["a a a a"], 2) == pytest.approx(1 / 3, abs=1e-12)
        ok("metric-hand-values", "bleu 2/3, ppl 4.0, distinct 1/3")

    def test_repetition_metrics_match_brute_force_on_200_stories(self):
        rng = np.random.default_rng(77)
        alphabet = "a b c d e f".split()
        stories = []
        for _ in range(200):
            n_sent = int(rng.integers(2, 6))
            sentences = [" ".join(rng.choice(alphabet,
                                             size=int(rng.integers(3, 10))))
                         for _ in range(n_sent)]
            stories.append(sentences)

        texts = [" . ".join(s) for s in stories]
        for threshold in (2, 3):
            got = metrics.lexical_repetition_n(texts, threshold)
            flagged = 0
            for text in texts:
                toks = metrics.tokenize(text)
                counts = Counter(tuple(toks[i:i + 4])
                                 for i in range(len(toks) - 3))
                flagged += int(bool(counts) and max(counts.values()) >= threshold)
            assert got == pytest.approx(flagged / len(texts), abs=1e-12)

        for sentences in stories:
            scores, aggregate = metrics.intra_story_repetition(sentences)
            history: set = set()
            expected = []
            for i, sentence in enumerate(sentences):
                toks = metrics.tokenize(sentence)
                grams = [tuple(toks[j:j + 3]) for j in range(len(toks) - 2)]
                if i > 0:
                    expected.append(
                        sum(1 for g in grams if g in history) / len(grams)
                        if grams else 0.0)
                history.update(grams)
            assert scores == pytest.approx(expected, abs=1e-12)
            assert aggregate == pytest.approx(
                float(np.mean(expected)) if expected else 0.0, abs=1e-12)
        ok("metric-brute-force", "LR-n and intra-story repetition on 200 stories")


class TestPipelineIntegration:
    def test_end_to_end_with_ablation_table(self, toy_data, tmp_path):
        root, _, _ = toy_data
        started = time.perf_counter()
        variants = [("full", []), ("no_cm", ["cm"]), ("no_sen", ["sen"]),
                    ("no_leading", ["leading"]), ("no_events", ["events"])]
        report_paths = []
        for name, ablate in variants:
            run_dir = tmp_path / f"run_{name}"
            train_args = ["train", "--data", str(root / "data"),
                          "--out", str(run_dir), "--steps", "40",
                          "--epochs", "20", "--batch-size", "8",
                          "--learning-rate", "2e-3", "--dropout", "0.0"]
            if ablate:
                train_args += ["--ablate", ",".join(ablate)]
            assert cli.main(train_args) == 0
            gen = tmp_path / f"gen_{name}.jsonl"
            assert cli.main(["generate", "--run", str(run_dir),
                             "--data", str(root / "data"), "--split", "test",
                             "--out", str(gen), "--strategy", "nucleus",
                             "--p", "0.9", "--max-new-tokens", "60"]) == 0
            eval_dir = tmp_path / f"eval_{name}"
            assert cli.main(["evaluate", "--generated", str(gen),
                             "--data", str(root / "data"), "--split", "test",
                             "--out", str(eval_dir), "--run", str(run_dir),
                             "--embeddings",
                             f"toy={TOY / 'word_vectors.txt'}",
                             "--model-name", "toy",
                             "--ablation-name", name]) == 0
            report_paths.append(str(eval_dir / "report.json"))
        merged = tmp_path / "table.tsv"
        assert cli.main(["report", "--inputs", *report_paths,
                         "--out", str(merged)]) == 0
        lines = merged.read_text().splitlines()
        assert lines[0].split("\t") == metrics.TSV_COLUMNS
        ablation_rows = [line.split("\t")[1] for line in lines[1:]]
        assert ablation_rows == ["full", "no_cm", "no_sen", "no_leading",
                                 "no_events"]
        elapsed = time.perf_counter() - started
        assert elapsed < 600.0
        ok("pipeline-integration", f"5 variants in {elapsed:.0f}s")


class TestPostTrainingPipeline:
    def test_window_oracle_and_lineage(self, toy_data, tmp_path):
        root, _, _ = toy_data
        sentences = json.loads((TOY / "book.jsonl").read_text())["sentences"]
        assert len(sentences) == 60
        expected_windows = sum(1 for s in range(0, len(sentences), 11)
                               if len(sentences[s:s + 11]) >= 2)
        oracle = corpus.segment_for_posttraining(sentences)
        assert len(oracle) == expected_windows

        assert cli.main(["extract", "--conllu", str(TOY / "book.conllu"),
                         "--out", str(tmp_path / "ex")]) == 0
        assert cli.main(["prepare", "--stories", str(TOY / "book.jsonl"),
                         "--events", str(tmp_path / "ex" / "events.tsv"),
                         "--word-vectors", str(TOY / "word_vectors.txt"),
                         "--mode", "book", "--split", "1,0,0",
                         "--out", str(tmp_path / "bookdata")]) == 0
        manifest = json.loads((tmp_path / "bookdata" / "manifest.json").read_text())
        assert sum(manifest["counts"].values()) == expected_windows

        # scratch model on the book data, then post-train, then fine-tune
        base_args = ["--steps", "4", "--epochs", "4", "--batch-size", "4",
                     "--model-dim", "16", "--layers", "1", "--heads", "2",
                     "--ffn-dim", "24", "--dropout", "0.0"]
        assert cli.main(["train", "--data", str(tmp_path / "bookdata"),
                         "--out", str(tmp_path / "base"), *base_args]) == 0
        assert cli.main(["posttrain", "--data", str(tmp_path / "bookdata"),
                         "--init", str(tmp_path / "base"),
                         "--out", str(tmp_path / "ke"), "--epochs", "2"]) == 0
        sidecar = json.loads((tmp_path / "ke" / "checkpoint.json").read_text())
        assert sidecar["lineage"] == "ke"
        assert cli.main(["train", "--data", str(tmp_path / "bookdata"),
                         "--init-from", str(tmp_path / "ke"),
                         "--out", str(tmp_path / "ft"), "--steps", "3",
                         "--epochs", "3"]) == 0
        ft_sidecar = json.loads((tmp_path / "ft" / "checkpoint.json").read_text())
        assert ft_sidecar["lineage"] == "ke"
        ok("post-training-pipeline",
           f"{expected_windows} windows, ke lineage preserved through fine-tune")
