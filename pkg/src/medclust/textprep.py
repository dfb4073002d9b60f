"""Narrative diagnoses -> BOW / TF-IDF vectors.

Tokenization lowercases and strips punctuation, a rules-file-driven suffix
stemmer reduces inflected forms, and the vocabulary keeps only stems whose
corpus-wide count reaches the configured minimum word frequency. The repo
ships a small Croatian-style suffix set; any rule file with the same schema
can be swapped in.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyCorpusError, LeakageError

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

MIN_DIAGNOSIS_CHARS = 5


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; punctuation acts as a delimiter."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class StemmerRules:
    suffixes: tuple[tuple[str, str], ...]  # (suffix, replacement), file order
    min_stem_length: int = 3

    @classmethod
    def load(cls, path: str | Path) -> "StemmerRules":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(tuple((r["suffix"], r.get("replacement", "")) for r in d["rules"]),
                   int(d.get("min_stem_length", 3)))

    @classmethod
    def default(cls) -> "StemmerRules":
        return cls.load(Path(__file__).parent / "data" / "stemmer_rules.json")


def stem(token: str, rules: StemmerRules) -> str:
    """Apply the longest matching suffix rule once; ties go to file order.

    The token is returned unchanged when nothing matches or the result
    would drop below the minimum stem length.
    """
    best = None
    for suffix, replacement in rules.suffixes:
        if token.endswith(suffix) and len(suffix) > 0:
            if best is None or len(suffix) > len(best[0]):
                best = (suffix, replacement)
    if best is None:
        return token
    suffix, replacement = best
    candidate = token[:len(token) - len(suffix)] + replacement
    if len(candidate) < rules.min_stem_length:
        return token
    return candidate


def stem_tokens(text: str, rules: StemmerRules) -> list[str]:
    return [stem(t, rules) for t in tokenize(text)]


@dataclass
class Corpus:
    vocabulary: list[str]          # lexicographic order
    doc_frequency: list[int]       # documents containing each stem
    n_documents: int
    min_word_frequency: int

    @property
    def index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.vocabulary)}

    def to_json(self) -> str:
        return json.dumps({
            "vocabulary": self.vocabulary,
            "doc_frequency": self.doc_frequency,
            "n_documents": self.n_documents,
            "min_word_frequency": self.min_word_frequency,
        })

    @classmethod
    def from_json(cls, text: str) -> "Corpus":
        d = json.loads(text)
        return cls(d["vocabulary"], d["doc_frequency"], d["n_documents"],
                   d["min_word_frequency"])


def build_corpus(diagnoses: list[str], min_word_frequency: int,
                 rules: StemmerRules | None = None, split: str = "train") -> Corpus:
    """Vocabulary of stems occurring at least ``min_word_frequency`` times.

    Only the training split may define the vocabulary; the split label is
    asserted here to make leaks loud.
    """
    if split != "train":
        raise LeakageError(f"corpus must be built on the train split, got {split!r}")
    rules = rules or StemmerRules.default()
    totals: dict[str, int] = {}
    doc_sets: list[set[str]] = []
    for text in diagnoses:
        stems = stem_tokens(text, rules)
        doc_sets.append(set(stems))
        for s in stems:
            totals[s] = totals.get(s, 0) + 1
    vocabulary = sorted(s for s, c in totals.items() if c >= min_word_frequency)
    if not vocabulary:
        raise EmptyCorpusError(
            f"min_word_frequency={min_word_frequency} excludes every stem")
    df = [sum(1 for ds in doc_sets if s in ds) for s in vocabulary]
    return Corpus(vocabulary, df, len(diagnoses), min_word_frequency)


def bow_vector(text: str, corpus: Corpus, rules: StemmerRules | None = None) -> np.ndarray:
    """Raw in-vocabulary stem counts; out-of-vocabulary stems are ignored."""
    rules = rules or StemmerRules.default()
    index = corpus.index
    vec = np.zeros(len(corpus.vocabulary))
    for s in stem_tokens(text, rules):
        i = index.get(s)
        if i is not None:
            vec[i] += 1.0
    return vec


def tfidf_vector(text: str, corpus: Corpus, rules: StemmerRules | None = None) -> np.ndarray:
    """Smoothed-idf TF-IDF, L2-normalised; the zero vector stays zero."""
    tf = bow_vector(text, corpus, rules)
    idf = np.array([math.log((1 + corpus.n_documents) / (1 + df)) + 1.0
                    for df in corpus.doc_frequency])
    vec = tf * idf
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def vectorize(texts: list[str], corpus: Corpus, method: str = "tfidf",
              rules: StemmerRules | None = None) -> np.ndarray:
    rules = rules or StemmerRules.default()
    fn = tfidf_vector if method == "tfidf" else bow_vector
    if method not in ("tfidf", "bow"):
        raise ValueError(f"unknown text method {method!r}")
    return np.stack([fn(t, corpus, rules) for t in texts]) if texts else np.zeros((0, len(corpus.vocabulary)))


def read_diagnoses_csv(path: str | Path) -> tuple[dict[str, str], list[str]]:
    """Load (exam_id, text) rows; texts under 5 characters are rejected.

    Returns (exam_id -> text, rejected exam ids).
    """
    by_exam: dict[str, str] = {}
    rejected: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            if not row:
                continue
            exam_id, text = row[0], row[1] if len(row) > 1 else ""
            if len(text.strip()) < MIN_DIAGNOSIS_CHARS:
                rejected.append(exam_id)
            else:
                by_exam[exam_id] = text
    return by_exam, rejected
