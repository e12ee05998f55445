"""Valence lexicons, valence-annotated corpora, vocabulary and tokenisation.

Valence lives on the [1, 9] scale (1 most negative, 5 neutral, 9 most
positive).  A rating of 0 is the sentinel for "no rating": words missing
from the lexicon and unlabelled sentences carry it, and every contrastive
objective filters such entries out.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    CorpusFormatError,
    EmptyLexiconError,
    LexiconFormatError,
    ValenceRangeError,
    VocabularyError,
)

logger = logging.getLogger(__name__)

Y_MIN = 1.0
Y_MAX = 9.0
SENTINEL = 0.0

CLS, MASK, PAD, UNK = "[CLS]", "[MASK]", "[PAD]", "[UNK]"
RESERVED = (CLS, MASK, PAD, UNK)
CLS_ID, MASK_ID, PAD_ID, UNK_ID = 0, 1, 2, 3

_WORD_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def is_rated(value):
    """True for a real valence rating, False for the 0 sentinel."""
    return value != SENTINEL


def check_valence(value, allow_sentinel=True):
    value = float(value)
    if allow_sentinel and value == SENTINEL:
        return value
    if not (Y_MIN <= value <= Y_MAX):
        raise ValenceRangeError(f"valence {value!r} outside [{Y_MIN:g}, {Y_MAX:g}]")
    return value


@dataclass(frozen=True)
class Lexicon:
    entries: dict
    source_name: str = ""

    def __post_init__(self):
        for word, v in self.entries.items():
            if not (Y_MIN <= v <= Y_MAX):
                raise ValenceRangeError(f"lexicon entry {word!r} has valence {v} outside [1, 9]")

    def lookup(self, word):
        return self.entries.get(word.lower(), SENTINEL)

    def __contains__(self, word):
        return word.lower() in self.entries

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class AnnotatedSentence:
    text: str
    sentence_valence: float = SENTINEL

    def __post_init__(self):
        if not self.text.strip():
            raise CorpusFormatError("sentence text is empty")
        check_valence(self.sentence_valence)


@dataclass(frozen=True)
class TokenizedSentence:
    token_ids: tuple
    token_valences: tuple
    surface_spans: tuple
    text: str = ""

    def __post_init__(self):
        if len(self.token_ids) != len(self.token_valences) or len(self.token_ids) != len(self.surface_spans):
            raise ValueError("token ids, valences and spans must align")
        if not self.token_ids or self.token_ids[0] != CLS_ID:
            raise ValueError("tokenized sentence must start with the CLS id")

    def __len__(self):
        return len(self.token_ids)

    @property
    def sentence_valence(self):
        return self.token_valences[0]


@dataclass(frozen=True)
class Vocabulary:
    """Dense token -> id map with the four reserved tokens at ids 0..3."""

    tokens: tuple
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED:
            raise VocabularyError(f"reserved tokens must occupy ids 0..3 as {RESERVED}")
        if len(set(self.tokens)) != len(self.tokens):
            raise VocabularyError("duplicate tokens in vocabulary")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def id_of(self, token):
        return self.index.get(token, UNK_ID)

    def token_of(self, idx):
        return self.tokens[idx]

    def to_text(self):
        return "".join(f"{tok}\t{i}\n" for i, tok in enumerate(self.tokens))

    def digest(self):
        """48-bit content hash, exactly representable as a float64."""
        return int(hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:12], 16)

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path):
        tokens = []
        with open(path, encoding="utf-8", newline="") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\r\n")
                if not line:
                    continue
                tok, sep, idx = line.rpartition("\t")
                if not sep or not idx.isdigit() or int(idx) != len(tokens):
                    raise VocabularyError(f"line {lineno}: expected 'token<TAB>{len(tokens)}'")
                tokens.append(tok)
        return cls(tuple(tokens))


def load_lexicon(path):
    """Read a ``word<TAB>valence[<TAB>...]`` file; later duplicates win."""
    path = Path(path)
    entries = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 2 or not cols[0].strip():
                raise LexiconFormatError("expected 'word<TAB>valence'", lineno)
            word = cols[0].strip().lower()
            try:
                value = float(cols[1])
            except ValueError:
                raise LexiconFormatError(f"non-numeric valence {cols[1]!r}", lineno) from None
            if not np.isfinite(value) or not (Y_MIN <= value <= Y_MAX):
                raise LexiconFormatError(f"valence {value} outside [1, 9]", lineno)
            if word in entries:
                logger.warning("%s:%d duplicate entry %r, keeping the later value", path.name, lineno, word)
            entries[word] = value
    if not entries:
        raise EmptyLexiconError(f"{path} contains no lexicon entries")
    return Lexicon(entries, source_name=path.name)


def load_corpus(path):
    """Read JSONL lines ``{"text": ..., "valence": ...}``; missing valence -> 0."""
    sentences = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict) or not isinstance(obj.get("text"), str):
                raise CorpusFormatError("expected an object with a string 'text' field", lineno)
            valence = obj.get("valence", SENTINEL)
            if valence is None:
                valence = SENTINEL
            if isinstance(valence, bool) or not isinstance(valence, (int, float)):
                raise CorpusFormatError(f"valence must be a number, got {valence!r}", lineno)
            if valence != SENTINEL and not (Y_MIN <= valence <= Y_MAX):
                raise ValenceRangeError(f"line {lineno}: valence {valence} outside [1, 9]")
            try:
                sentences.append(AnnotatedSentence(obj["text"], float(valence)))
            except CorpusFormatError as exc:
                raise CorpusFormatError(str(exc), lineno) from None
    return sentences


def split_words(text):
    """Lowercased word/punctuation split with character spans."""
    return [(m.group().lower(), m.span()) for m in _WORD_RE.finditer(text)]


def _subword_spans(word, span, pieces):
    if "".join(pieces) == word:
        out, start = [], span[0]
        for piece in pieces:
            out.append((start, start + len(piece)))
            start += len(piece)
        return out
    return [span] * len(pieces)


def tokenize(sentence, vocab, lexicon, max_len, splitter: Callable[[str], Sequence[str]] | None = None):
    """Map a sentence to ids with per-token valences aligned to them.

    Position 0 is CLS and carries the sentence valence.  Every piece of a
    lexicon word shares the word's valence, including pieces that fall back
    to UNK.  ``splitter`` optionally breaks words into sub-word pieces.
    """
    if max_len < 2:
        raise ValueError(f"max_len must be at least 2, got {max_len}")
    ids, vals, spans = [CLS_ID], [float(sentence.sentence_valence)], [(0, 0)]
    for word, span in split_words(sentence.text):
        valence = lexicon.lookup(word) if lexicon is not None else SENTINEL
        pieces = list(splitter(word)) if splitter is not None else [word]
        for piece, piece_span in zip(pieces, _subword_spans(word, span, pieces)):
            ids.append(vocab.id_of(piece))
            vals.append(valence)
            spans.append(piece_span)
    ids, vals, spans = ids[:max_len], vals[:max_len], spans[:max_len]
    return TokenizedSentence(tuple(ids), tuple(vals), tuple(spans), sentence.text)


def build_vocabulary(corpus, min_count=1):
    """Reserved tokens, then tokens by descending count and lexicographic order."""
    if not corpus:
        raise VocabularyError("cannot build a vocabulary from an empty corpus")
    counts = Counter(word for s in corpus for word, _ in split_words(s.text))
    if not counts:
        raise VocabularyError("corpus contains no tokens")
    kept = sorted((w for w, c in counts.items() if c >= min_count and w not in RESERVED), key=lambda w: (-counts[w], w))
    return Vocabulary(RESERVED + tuple(kept))


def pad_batch(sentences, pad_id=PAD_ID):
    """Stack tokenised sentences into ``(ids, mask, valences)`` arrays."""
    width = max(len(s) for s in sentences)
    ids = np.full((len(sentences), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(sentences), width), dtype=bool)
    vals = np.zeros((len(sentences), width), dtype=np.float64)
    for b, s in enumerate(sentences):
        n = len(s)
        ids[b, :n] = s.token_ids
        mask[b, :n] = True
        vals[b, :n] = s.token_valences
    return ids, mask, vals
