"""Narrative diagnoses -> BOW and TF-IDF vectors.

Tokenization, suffix stemming from the shipped rules file, corpus building
with a minimum word frequency, and both vectorizations.
"""

import numpy as np

from medclust.textprep import (
    StemmerRules,
    bow_vector,
    build_corpus,
    stem,
    stem_tokens,
    tfidf_vector,
    tokenize,
)

diagnoses = [
    "Fraktura radiusa, bez pomaka ulomaka.",
    "Uredan nalaz pluća i srca; bez infiltrata.",
    "Stara fraktura radiusa. Kontrolna snimka.",
    "Pluća urednog nalaza, srce nije uvećano.",
    "Fraktura klavikule lijevo, pomak ulomaka.",
]

print("tokenize:", tokenize(diagnoses[0]))

rules = StemmerRules.default()
for token in ("fraktura", "radiusa", "pluća", "snimka"):
    print(f"stem: {token} -> {stem(token, rules)}")

corpus = build_corpus(diagnoses, min_word_frequency=2, rules=rules)
print(f"corpus: {len(corpus.vocabulary)} stems at threshold "
      f"{corpus.min_word_frequency}: {corpus.vocabulary}")

query = "Fraktura radiusa."
bow = bow_vector(query, corpus, rules)
tfidf = tfidf_vector(query, corpus, rules)
print("query stems:", stem_tokens(query, rules))
print("BOW   :", bow)
print("TF-IDF:", np.round(tfidf, 3), "| L2 norm:", round(float(np.linalg.norm(tfidf)), 6))

# raising the threshold only ever shrinks the vocabulary
for threshold in (1, 2, 3):
    try:
        c = build_corpus(diagnoses, threshold, rules=rules)
        print(f"threshold {threshold}: {len(c.vocabulary)} stems")
    except Exception as exc:
        print(f"threshold {threshold}: {type(exc).__name__}")
