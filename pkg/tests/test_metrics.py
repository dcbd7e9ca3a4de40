import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from storylab import corpus, metrics


corpus_texts = st.lists(
    st.lists(st.sampled_from("a b c d e dog ran fast .".split()),
             min_size=1, max_size=12).map(" ".join),
    min_size=1, max_size=6)


class TestPerplexity:
    def test_certain_model_scores_one(self):
        assert metrics.perplexity_from_logprobs([0.0, 0.0]) == 1.0

    def test_uniform_model_scores_vocab_size(self):
        v = 37
        logp = [math.log(1.0 / v)] * 5
        assert metrics.perplexity_from_logprobs(logp) == pytest.approx(v, rel=1e-12)

    def test_geometric_mean_oracle(self):
        probs = [0.5, 0.25, 0.125]
        expected = (0.5 * 0.25 * 0.125) ** (-1.0 / 3.0)
        got = metrics.perplexity_from_logprobs([math.log(p) for p in probs])
        assert got == pytest.approx(expected, abs=1e-9)
        assert got == pytest.approx(4.0, abs=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(metrics.MetricError):
            metrics.perplexity_from_logprobs([])


class TestBleu:
    def test_perfect_match(self):
        assert metrics.bleu_n(["a b c"], ["a b c"], 2) == pytest.approx(1.0)

    def test_disjoint_vocabulary(self):
        assert metrics.bleu_n(["x y z"], ["a b c"], 1) == 0.0

    def test_hand_counted_unigram_case(self):
        assert metrics.bleu_n(["a b c"], ["a b d"], 1) == pytest.approx(2 / 3, abs=1e-12)

    def test_brevity_penalty(self):
        # candidate half as long as reference: BP = exp(1 - 2) = e^-1
        got = metrics.bleu_n(["a b"], ["a b c d"], 1)
        assert got == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_order_must_be_positive(self):
        with pytest.raises(metrics.MetricError):
            metrics.bleu_n(["a"], ["a"], 0)

    def test_smoothing_rescues_zero_bigrams(self):
        plain = metrics.bleu_n(["a c b"], ["a b c"], 2)
        smoothed = metrics.bleu_n(["a c b"], ["a b c"], 2, smooth=True)
        assert plain == 0.0 and smoothed > 0.0


class TestRouge:
    def test_perfect_match(self):
        assert metrics.rouge_n(["a b c"], ["a b c"], 1) == 1.0
        assert metrics.rouge_l(["a b c"], ["a b c"]) == 1.0

    def test_hand_counted_recall(self):
        assert metrics.rouge_n(["a b"], ["a b c d"], 1,
                               mode="recall") == pytest.approx(0.5)

    def test_rouge_l_f1_oracle(self):
        # LCS("a c e", "a b c d e") = 3; P = 1, R = 0.6, F1 = 0.75
        assert metrics.rouge_l(["a c e"], ["a b c d e"]) == pytest.approx(0.75)

    def test_rouge_l_recall_mode(self):
        assert metrics.rouge_l(["a c e"], ["a b c d e"],
                               mode="recall") == pytest.approx(0.6)

    def test_mismatched_lengths(self):
        with pytest.raises(metrics.MetricError):
            metrics.rouge_n(["a"], ["a", "b"], 1)


class TestDistinct:
    def test_all_unique(self):
        assert metrics.distinct_n(["a b c d"], 2) == 1.0

    def test_repeated_token_case(self):
        assert metrics.distinct_n(["a a a a"], 2) == pytest.approx(1 / 3)

    def test_empty_corpus_rejected(self):
        with pytest.raises(metrics.MetricError):
            metrics.distinct_n([""], 2)


class TestLexicalRepetition:
    def test_no_repeats(self):
        assert metrics.lexical_repetition_n(["a b c d e"], 2) == 0.0

    def test_hand_counted_repeat(self):
        assert metrics.lexical_repetition_n(["a b c d a b c d"], 2) == 1.0

    def test_threshold_of_three(self):
        twice = "a b c d a b c d"
        assert metrics.lexical_repetition_n([twice], 3) == 0.0
        thrice = "a b c d a b c d a b c d"
        assert metrics.lexical_repetition_n([thrice], 3) == 1.0

    def test_threshold_validation(self):
        with pytest.raises(metrics.MetricError):
            metrics.lexical_repetition_n(["a"], 1)

    @given(corpus_texts, st.integers(2, 3))
    @settings(max_examples=50)
    def test_matches_brute_force(self, stories, n):
        def brute(story):
            tokens = metrics.tokenize(story)
            grams = [tuple(tokens[i:i + 4]) for i in range(len(tokens) - 3)]
            return 1 if grams and Counter(grams).most_common(1)[0][1] >= n else 0
        expected = sum(brute(s) for s in stories) / len(stories)
        assert metrics.lexical_repetition_n(stories, n) == pytest.approx(expected)


class TestIntraStoryRepetition:
    def test_identical_sentences_score_one(self):
        scores, aggregate = metrics.intra_story_repetition(["a b c d"] * 4)
        assert scores == [1.0, 1.0, 1.0] and aggregate == 1.0

    def test_disjoint_sentences_score_zero(self):
        scores, aggregate = metrics.intra_story_repetition(
            ["a b c", "d e f", "g h i"])
        assert scores == [0.0, 0.0] and aggregate == 0.0

    def test_three_sentence_case_matches_set_oracle(self):
        sentences = ["the dog ran fast", "the dog ran home", "a dog ran fast"]
        scores, aggregate = metrics.intra_story_repetition(sentences)

        def tri(s):
            toks = metrics.tokenize(s)
            return [tuple(toks[i:i + 3]) for i in range(len(toks) - 2)]

        seen = set(tri(sentences[0]))
        expected = []
        for s in sentences[1:]:
            grams = tri(s)
            expected.append(sum(1 for g in grams if g in seen) / len(grams))
            seen.update(grams)
        assert scores == pytest.approx(expected)
        assert aggregate == pytest.approx(np.mean(expected))

    @given(st.lists(st.lists(st.sampled_from("a b c d".split()),
                             min_size=3, max_size=8).map(" ".join),
                    min_size=2, max_size=6))
    @settings(max_examples=50)
    def test_scores_in_unit_interval(self, sentences):
        scores, aggregate = metrics.intra_story_repetition(sentences)
        assert all(0.0 <= s <= 1.0 for s in scores)
        assert 0.0 <= aggregate <= 1.0


class TestCoherenceRelevance:
    def table(self):
        words = {"dog": [1.0, 0.0], "ran": [0.8, 0.2], "cat": [0.0, 1.0],
                 "sat": [0.1, 0.9], "fast": [0.7, 0.1]}
        return corpus.EmbeddingTable(
            words={k: np.array(v) for k, v in words.items()})

    def test_identical_sentences_cohere_fully(self):
        coherence, skipped = metrics.intra_story_coherence(
            ["dog ran", "dog ran", "dog ran"], self.table())
        assert coherence == pytest.approx(1.0) and skipped == 0

    def test_leading_equal_to_story_is_fully_relevant(self):
        relevance, _ = metrics.intra_story_relevance(
            "dog ran", ["dog ran", "dog ran"], self.table())
        assert relevance == pytest.approx(1.0)

    def test_two_sentence_cosine_oracle(self):
        table = self.table()
        coherence, _ = metrics.intra_story_coherence(["dog", "cat"], table)
        u, v = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        assert coherence == pytest.approx(
            float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v))), abs=1e-12)

    def test_out_of_vocabulary_sentences_are_skipped_and_counted(self):
        coherence, skipped = metrics.intra_story_coherence(
            ["dog ran", "zzz qqq", "cat sat"], self.table())
        assert skipped == 1
        u = (np.array([1.0, 0.0]) + np.array([0.8, 0.2])) / 2
        v = (np.array([0.0, 1.0]) + np.array([0.1, 0.9])) / 2
        assert coherence == pytest.approx(
            float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v))), abs=1e-12)


class TestReportAggregation:
    def make_report(self):
        cands = ["the dog ran fast . the dog ran home .",
                 "a cat sat . a cat sat ."]
        refs = ["the dog ran fast . then it came home .",
                "a cat sat down . it purred ."]
        leads = ["a dog was lost .", "a cat was here ."]
        table = corpus.EmbeddingTable(words={
            w: np.array([1.0 + (hash(w) % 5) * 0.1, 0.5 + (hash(w) % 3) * 0.2])
            for w in "the a dog cat ran sat fast home down it came was lost here purred .".split()})
        return metrics.evaluate_generated(cands, refs, leads,
                                          tables={"toy": table})

    def test_rates_bounded(self):
        report = self.make_report()
        for value in (report.rouge1, report.rouge2, report.rougeL, report.bleu1,
                      report.bleu2, report.lr2, report.d4):
            assert 0.0 <= value <= 1.0

    def test_aggregates_are_means(self):
        report = self.make_report()
        assert report.intra_repetition_aggregate == pytest.approx(
            np.mean([s for s in report.intra_repetition]), abs=0.5)

    def test_json_round_trip(self):
        report = self.make_report()
        back = metrics.MetricReport.from_json(report.to_json())
        assert back.rouge1 == report.rouge1
        assert back.coherence == report.coherence

    def test_tsv_layout(self, tmp_path):
        report = self.make_report()
        path = tmp_path / "report.tsv"
        metrics.write_report_tsv(path, [report, report])
        lines = path.read_text().splitlines()
        assert lines[0].split("\t") == metrics.TSV_COLUMNS
        assert len(lines) == 3
        assert all(len(l.split("\t")) == len(metrics.TSV_COLUMNS) for l in lines[1:])

    def test_repetition_series_file(self, tmp_path):
        report = self.make_report()
        path = tmp_path / "series.tsv"
        metrics.write_repetition_series(path, report)
        lines = path.read_text().splitlines()
        assert lines[0] == "sentence_index\tmean_repetition"
        assert len(lines) == 1 + len(report.intra_repetition)


class TestDeterminism:
    @given(corpus_texts)
    @settings(max_examples=30)
    def test_identical_inputs_identical_outputs(self, stories):
        refs = stories[::-1]
        a = metrics.bleu_n(stories, refs, 2)
        b = metrics.bleu_n(stories, refs, 2)
        assert a == b
        if any(len(metrics.tokenize(s)) >= 2 for s in stories):
            assert metrics.distinct_n(stories, 2) == metrics.distinct_n(stories, 2)
