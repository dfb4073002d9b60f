"""Tokenizer, suffix stemmer and BOW / TF-IDF vector contracts."""

import math

import numpy as np
import pytest

from medclust.errors import EmptyCorpusError, LeakageError
from medclust.textprep import (
    Corpus,
    StemmerRules,
    bow_vector,
    build_corpus,
    read_diagnoses_csv,
    stem,
    tfidf_vector,
    tokenize,
)


class TestTokenize:
    def test_strips_punctuation(self):
        assert tokenize("Fraktura, radiusa.") == ["fraktura", "radiusa"]

    def test_empty(self):
        assert tokenize("") == []

    def test_delimiters(self):
        assert tokenize("a;b:c") == ["a", "b", "c"]

    def test_unicode_lowercase(self):
        assert tokenize("Žučni MJEHUR") == ["žučni", "mjehur"]


class TestStem:
    rules = StemmerRules(suffixes=(("a", ""), ("ama", "")), min_stem_length=3)

    def test_single_suffix(self):
        assert stem("fraktura", self.rules) == "fraktur"

    def test_longest_suffix_wins(self):
        assert stem("frakturama", self.rules) == "fraktur"

    def test_short_token_unchanged(self):
        assert stem("da", self.rules) == "da"

    def test_no_match_unchanged(self):
        assert stem("nalaz", self.rules) == "nalaz"

    def test_min_length_guard(self):
        assert stem("osa", self.rules) == "osa"  # stripping 'a' leaves 2 chars

    def test_replacement_applied(self):
        rules = StemmerRules(suffixes=(("ovi", "-"),), min_stem_length=3)
        assert stem("gradovi", rules) == "grad-"


class TestBuildCorpus:
    rules = StemmerRules(suffixes=(), min_stem_length=3)

    def test_threshold_excludes_rare(self):
        corpus = build_corpus(["rijec rijec", "druga"], 2, rules=self.rules)
        assert corpus.vocabulary == ["rijec"]

    def test_threshold_one_keeps_all(self):
        corpus = build_corpus(["b a", "c"], 1, rules=self.rules)
        assert corpus.vocabulary == ["a", "b", "c"]  # lexicographic

    def test_empty_corpus_error(self):
        with pytest.raises(EmptyCorpusError):
            build_corpus(["a b"], 100, rules=self.rules)

    def test_leakage_guard(self):
        with pytest.raises(LeakageError):
            build_corpus(["a a"], 1, rules=self.rules, split="val")

    def test_paper_grid_thresholds_accepted(self):
        docs = ["word " * 10000]
        for threshold in (5, 10, 50, 100, 500, 1000, 2000, 3500, 5000, 10000):
            corpus = build_corpus(docs, threshold, rules=self.rules)
            assert corpus.min_word_frequency == threshold

    def test_monotone_in_threshold(self, rng):
        words = [f"w{i}" for i in range(30)]
        docs = [" ".join(rng.choice(words, size=20)) for _ in range(50)]
        sizes = []
        for threshold in (1, 3, 10, 40):
            try:
                corpus = build_corpus(docs, threshold, rules=self.rules)
                sizes.append(len(corpus.vocabulary))
            except EmptyCorpusError:
                sizes.append(0)
        assert sizes == sorted(sizes, reverse=True)


class TestVectors:
    rules = StemmerRules(suffixes=(), min_stem_length=3)

    def _corpus(self, docs, threshold=1):
        return build_corpus(docs, threshold, rules=self.rules)

    def test_bow_counts(self):
        corpus = self._corpus(["aa bb", "aa"])
        vec = bow_vector("aa aa bb", corpus, self.rules)
        assert vec.tolist() == [2.0, 1.0]

    def test_bow_oov_zero(self):
        corpus = self._corpus(["aa bb"])
        assert (bow_vector("zz yy", corpus, self.rules) == 0).all()

    def test_bow_ordering(self):
        corpus = Corpus(["a1", "b2", "c3"], [1, 1, 1], 1, 1)
        vec = bow_vector("c3 a1", corpus, self.rules)
        assert vec.tolist() == [1.0, 0.0, 1.0]

    def test_tfidf_hand_computed(self):
        corpus = self._corpus(["aa bb", "aa cc"])
        vec = tfidf_vector("aa bb", corpus, self.rules)
        idf_a = math.log(3 / 3) + 1
        idf_b = math.log(3 / 2) + 1
        raw = np.array([idf_a, idf_b, 0.0])
        expect = raw / np.linalg.norm(raw)
        assert np.abs(vec - expect).max() < 1e-12
        assert abs(vec[0] - 0.580) < 1e-3 and abs(vec[1] - 0.815) < 1e-3

    def test_tfidf_oov_zero_vector(self):
        corpus = self._corpus(["aa bb"])
        assert (tfidf_vector("zz", corpus, self.rules) == 0).all()

    def test_tfidf_unit_or_zero_norm(self, rng):
        corpus = self._corpus(["aa bb cc", "bb cc dd", "dd ee"])
        for _ in range(20):
            words = rng.choice(["aa", "bb", "cc", "dd", "ee", "zz"],
                               size=rng.integers(0, 8))
            norm = np.linalg.norm(tfidf_vector(" ".join(words), corpus, self.rules))
            assert abs(norm - 1.0) < 1e-12 or norm == 0.0

    def test_single_doc_unit_coordinate(self):
        corpus = self._corpus(["aaa"])
        vec = tfidf_vector("aaa", corpus, self.rules)
        assert abs(vec[0] - 1.0) < 1e-12


class TestCorpusRoundtrip:
    def test_json_roundtrip(self):
        corpus = Corpus(["a", "b"], [2, 1], 5, 2)
        again = Corpus.from_json(corpus.to_json())
        assert again == corpus

    def test_reproducible(self):
        rules = StemmerRules.default()
        docs = ["Fraktura radiusa bez pomaka.", "Uredan nalaz pluća i srca."]
        a = build_corpus(docs, 1, rules=rules)
        b = build_corpus(docs, 1, rules=rules)
        assert a == b


def test_read_diagnoses_rejects_short(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("exam_id,text\nE1,valid diagnosis text\nE2,abc\nE3,    \n")
    accepted, rejected = read_diagnoses_csv(p)
    assert set(accepted) == {"E1"}
    assert set(rejected) == {"E2", "E3"}
