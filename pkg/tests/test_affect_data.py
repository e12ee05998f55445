import json
import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softmcl.affect_data import (
    CLS_ID,
    RESERVED,
    UNK_ID,
    AnnotatedSentence,
    Lexicon,
    Vocabulary,
    build_vocabulary,
    load_corpus,
    load_lexicon,
    pad_batch,
    split_words,
    tokenize,
)
from softmcl.errors import (
    CorpusFormatError,
    EmptyLexiconError,
    LexiconFormatError,
    ValenceRangeError,
    VocabularyError,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_bytes(text.encode("utf-8"))
    return p


# -- lexicon ----------------------------------------------------------------------


def test_lexicon_single_entry(tmp_path):
    lex = load_lexicon(write(tmp_path, "l.tsv", "good\t7.89\n"))
    assert lex.entries == {"good": 7.89}
    assert lex.source_name == "l.tsv"


def test_lexicon_comments_only_is_empty(tmp_path):
    with pytest.raises(EmptyLexiconError):
        load_lexicon(write(tmp_path, "l.tsv", "# nothing here\n# still nothing\n"))
    with pytest.raises(EmptyLexiconError):
        load_lexicon(write(tmp_path, "e.tsv", ""))


def test_lexicon_last_duplicate_wins_with_warning(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        lex = load_lexicon(write(tmp_path, "l.tsv", "bad\t3.24\nbad\t3.00\n"))
    assert lex.entries == {"bad": 3.0}
    assert "duplicate" in caplog.text


def test_lexicon_extra_columns_crlf_and_case(tmp_path):
    lex = load_lexicon(write(tmp_path, "l.tsv", "# w\tv\ta\r\nClumsy\t4.14\t5.0\t3.1\r\nEARLY\t5.26\r\n"))
    assert lex.entries == {"clumsy": 4.14, "early": 5.26}


@pytest.mark.parametrize(
    "text, line",
    [("good\tseven\n", 1), ("# c\nok\t5\nbad\t10\n", 3), ("ok\t5\nlonely\n", 2), ("low\t0.5\n", 1)],
)
def test_lexicon_errors_carry_line_numbers(tmp_path, text, line):
    with pytest.raises(LexiconFormatError) as info:
        load_lexicon(write(tmp_path, "l.tsv", text))
    assert info.value.line_number == line
    assert f"line {line}" in str(info.value)


def test_lexicon_lookup_absent_is_sentinel():
    lex = Lexicon({"good": 7.89})
    assert lex.lookup("GOOD") == 7.89
    assert lex.lookup("missing") == 0


def test_lexicon_never_stores_sentinel():
    with pytest.raises(ValenceRangeError):
        Lexicon({"x": 0.0})


# -- corpus -----------------------------------------------------------------------


def test_corpus_mapping_and_sentinel(tmp_path):
    rows = [{"text": "fine day", "valence": 7.0}, {"text": "plain line"}]
    path = write(tmp_path, "c.jsonl", "".join(json.dumps(r) + "\n" for r in rows))
    assert load_corpus(path) == [AnnotatedSentence("fine day", 7.0), AnnotatedSentence("plain line", 0)]


def test_corpus_range_error(tmp_path):
    with pytest.raises(ValenceRangeError):
        load_corpus(write(tmp_path, "c.jsonl", '{"text":"x","valence":12}\n'))


def test_corpus_bad_json_has_line_number(tmp_path):
    with pytest.raises(CorpusFormatError) as info:
        load_corpus(write(tmp_path, "c.jsonl", '{"text":"ok"}\n{"text": oops}\n'))
    assert info.value.line_number == 2


def test_corpus_empty_text_rejected(tmp_path):
    with pytest.raises(CorpusFormatError):
        load_corpus(write(tmp_path, "c.jsonl", '{"text":"   "}\n'))


# -- tokenization -----------------------------------------------------------------

VOCAB = Vocabulary(RESERVED + ("the", "battery", "life", "is", "long", "good"))


def test_lexicon_word_carries_its_valence():
    lex = Lexicon({"long": 6.1})
    t = tokenize(AnnotatedSentence("The battery life is long", 5.5), VOCAB, lex, 16)
    assert t.token_ids[0] == CLS_ID
    assert t.token_valences == (5.5, 0, 0, 0, 0, 6.1)
    assert t.text[slice(*t.surface_spans[5])] == "long"


def test_empty_text_is_cls_only():
    # empty text cannot form an AnnotatedSentence, so tokenize a punctuation-free blank stand-in
    class Blank:
        text = ""
        sentence_valence = 4.0

    t = tokenize(Blank(), VOCAB, Lexicon({"good": 7.89}), 8)
    assert t.token_ids == (CLS_ID,)
    assert t.token_valences == (4.0,)


def test_repeated_lexicon_word_any_case():
    t = tokenize(AnnotatedSentence("Good good GOOD"), VOCAB, Lexicon({"good": 7.89}), 8)
    assert t.token_valences[1:] == (7.89, 7.89, 7.89)
    assert len(set(t.token_ids[1:])) == 1


def test_oov_lexicon_word_keeps_valence():
    t = tokenize(AnnotatedSentence("terrible"), VOCAB, Lexicon({"terrible": 1.9}), 8)
    assert t.token_ids == (CLS_ID, UNK_ID)
    assert t.token_valences == (0, 1.9)


def test_subword_pieces_share_word_valence():
    vocab = Vocabulary(RESERVED + ("clum", "##sy"))
    split = lambda w: ["clum", "##sy"] if w == "clumsy" else [w]  # noqa: E731
    t = tokenize(AnnotatedSentence("clumsy"), vocab, Lexicon({"clumsy": 4.14}), 8, splitter=split)
    assert t.token_ids == (CLS_ID, 4, 5)
    assert t.token_valences == (0, 4.14, 4.14)


def test_truncation_counts_cls():
    t = tokenize(AnnotatedSentence("the battery life is long"), VOCAB, Lexicon({"x": 5.0}), 3)
    assert len(t) == 3


def test_pad_batch_shapes():
    a = tokenize(AnnotatedSentence("the battery", 3.0), VOCAB, Lexicon({"x": 5.0}), 8)
    b = tokenize(AnnotatedSentence("long", 7.0), VOCAB, Lexicon({"long": 6.0}), 8)
    ids, mask, vals = pad_batch([a, b])
    assert ids.shape == mask.shape == vals.shape == (2, 3)
    assert mask.tolist() == [[True, True, True], [True, True, False]]
    assert vals[1].tolist() == [7.0, 6.0, 0.0]


words = st.lists(st.sampled_from(["good", "bad", "meh", "Good", "the", "!", "x1", "early"]), max_size=12)


@settings(max_examples=80, deadline=None)
@given(words)
def test_rated_token_count_equals_lexicon_hits(ws):
    text = " ".join(ws) or "meh"
    lex = Lexicon({"good": 7.89, "bad": 3.24, "early": 5.26})
    t = tokenize(AnnotatedSentence(text), VOCAB, lex, 64)
    rated = sum(1 for v in t.token_valences[1:] if v != 0)
    hits = sum(1 for w, _ in split_words(text) if w in lex)
    assert rated == hits
    assert t == tokenize(AnnotatedSentence(text), VOCAB, lex, 64)


# -- vocabulary -------------------------------------------------------------------


def test_vocabulary_frequency_then_lexicographic():
    v = build_vocabulary([AnnotatedSentence("a b"), AnnotatedSentence("a")], 1)
    assert v.tokens == RESERVED + ("a", "b")
    assert v.id_of("a") == 4 and v.id_of("b") == 5


def test_vocabulary_min_count():
    v = build_vocabulary([AnnotatedSentence("a b"), AnnotatedSentence("a")], 2)
    assert v.tokens == RESERVED + ("a",)


def test_vocabulary_empty_corpus():
    with pytest.raises(VocabularyError):
        build_vocabulary([], 1)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.text(alphabet="abcxyz é!?", min_size=1, max_size=20).filter(str.strip), min_size=1, max_size=8))
def test_vocabulary_round_trip(tmp_path_factory, texts):
    try:
        v = build_vocabulary([AnnotatedSentence(t) for t in texts], 1)
    except VocabularyError:
        return
    path = tmp_path_factory.mktemp("v") / "vocab.txt"
    v.save(path)
    loaded = Vocabulary.load(path)
    assert loaded.tokens == v.tokens
    assert loaded.digest() == v.digest()


def test_vocabulary_rejects_bad_reserved():
    with pytest.raises(VocabularyError):
        Vocabulary(("a", "b", "c", "d"))
