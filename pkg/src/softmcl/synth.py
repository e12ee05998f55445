"""Synthetic lexicon + valence-annotated corpus for desk-scale experiments.

Each lexicon word gets a valence drawn uniformly from [1, 9].  A sentence
picks a target valence, samples lexicon words near it (so sentence valences
cover the whole scale rather than bunching at the midpoint), sprinkles in a
few function words that are not in the lexicon, and is labelled with the
mean valence of its lexicon words.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .affect_data import Y_MAX, Y_MIN

FILLERS = ("the", "a", "of", "and", "to", "is", "it", "was", "this", "that", "very", "so")
_ONSETS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def make_words(n, rng):
    """``n`` distinct lowercase three-syllable pseudo-words."""
    words = set()
    while len(words) < n:
        words.add("".join(rng.choice(list(_ONSETS)) + rng.choice(list(_VOWELS)) for _ in range(3)))
    return sorted(words)


def generate(n_sentences, vocab_size, seed, spread=1.0, min_words=2, max_words=6, max_fillers=2):
    """Return ``(lexicon rows, corpus rows)``.

    Lexicon rows are ``(word, valence)``; corpus rows are dicts with
    ``text`` and ``valence`` (mean valence of the sentence's lexicon words).
    """
    if n_sentences < 10:
        raise ValueError("n must be at least 10")
    if vocab_size < 2:
        raise ValueError("vocab must be at least 2")
    rng = np.random.default_rng(seed)
    words = make_words(vocab_size, rng)
    valences = np.round(rng.uniform(Y_MIN, Y_MAX, size=vocab_size), 2)
    lexicon = list(zip(words, valences.tolist()))

    corpus = []
    for _ in range(n_sentences):
        centre = rng.uniform(Y_MIN, Y_MAX)
        weights = np.exp(-0.5 * ((valences - centre) / spread) ** 2) + 1e-6
        k = int(rng.integers(min_words, max_words + 1))
        picks = rng.choice(vocab_size, size=k, replace=True, p=weights / weights.sum())
        tokens = [words[i] for i in picks]
        for _ in range(int(rng.integers(0, max_fillers + 1))):
            tokens.insert(int(rng.integers(0, len(tokens) + 1)), FILLERS[int(rng.integers(len(FILLERS)))])
        corpus.append({"text": " ".join(tokens), "valence": float(np.mean(valences[picks]))})
    return lexicon, corpus


def write(out_dir, lexicon, corpus):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lex_path, corpus_path = out_dir / "lexicon.tsv", out_dir / "corpus.jsonl"
    with open(lex_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# word\tvalence\n")
        for word, v in lexicon:
            fh.write(f"{word}\t{v!r}\n")
    with open(corpus_path, "w", encoding="utf-8", newline="\n") as fh:
        for row in corpus:
            fh.write(json.dumps(row) + "\n")
    return lex_path, corpus_path
