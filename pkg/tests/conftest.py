import numpy as np
import pytest

from softmcl import synth
from softmcl.affect_data import AnnotatedSentence, Lexicon


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth():
    """A 120-sentence synthetic corpus over a 30-word lexicon."""
    lex_rows, corpus_rows = synth.generate(120, 30, seed=5)
    lexicon = Lexicon(dict(lex_rows), "synthetic")
    sentences = [AnnotatedSentence(r["text"], r["valence"]) for r in corpus_rows]
    return lexicon, sentences


@pytest.fixture
def synth_files(tmp_path):
    lex_rows, corpus_rows = synth.generate(120, 30, seed=5)
    return synth.write(tmp_path / "synth", lex_rows, corpus_rows)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion; returns ``ok``."""

    def record(name, ok, detail):
        line = f"{name} {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
