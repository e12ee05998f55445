"""Train-then-measure helpers shared by the command line and the acceptance runs."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import trainer
from .affect_data import SENTINEL, tokenize
from .metrics import MetricReport, collapse_diagnostics, valence_probe

logger = logging.getLogger(__name__)

SWEEP_PARAMS = {
    "tau": ("tau",),
    "mu": ("mu",),
    "queue": ("queue_capacity",),
    "lambda": ("lambda1", "lambda2"),
}


@dataclass
class RunResult:
    state: trainer.TrainState
    records: list
    data: trainer.PretrainData


def train(config, word_sentences, sent_sentences, lexicon, on_record=None):
    data = trainer.PretrainData.build(word_sentences, sent_sentences, lexicon, config)
    state = trainer.init_state(config, len(data.vocab))
    state, records = trainer.run(state, data, config, on_record=on_record)
    return RunResult(state, records, data)


def rated_sentences(sentences, vocab, lexicon, max_len):
    """Tokenised sentences with a real valence, plus those valences."""
    toks = [tokenize(s, vocab, lexicon, max_len) for s in sentences if s.sentence_valence != SENTINEL]
    return toks, np.array([t.sentence_valence for t in toks])


def sentence_embeddings(params, sentences, vocab, lexicon=None):
    toks, vals = rated_sentences(sentences, vocab, lexicon, params.config.max_len)
    return trainer.embed_sentences(params, toks), vals


def word_embeddings(params, sentences, vocab, lexicon):
    toks = [tokenize(s, vocab, lexicon, params.config.max_len) for s in sentences]
    vecs, vals, _ = trainer.embed_tokens(params, toks)
    return vecs, vals


def evaluate(embeddings, valences):
    """Probe reports followed by the collapse diagnostics as reports."""
    reports = list(valence_probe(embeddings, valences))
    n = len(valences)
    for name, value in collapse_diagnostics(embeddings, valences).items():
        reports.append(MetricReport(name, float("nan") if value is None else value, n))
    return reports


def probe_score(result, eval_sentences, metric="pearson_r"):
    emb, vals = sentence_embeddings(result.state.params, eval_sentences, result.data.vocab, result.data.lexicon)
    return {r.metric: r.value for r in evaluate(emb, vals)}[metric]


def sweep_config(config, param, value):
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}; choose from {sorted(SWEEP_PARAMS)}")
    return config.with_overrides({key: str(value) for key in SWEEP_PARAMS[param]})


def _sweep_one(args):
    config, param, value, word, sent, lexicon, eval_sentences, out_dir = args
    result = train(sweep_config(config, param, value), word, sent, lexicon)
    if out_dir is not None:
        run_dir = Path(out_dir) / f"{param}={value}"
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "train_log.csv").write_text(trainer.log_csv(result.records), encoding="utf-8", newline="\n")
    emb, vals = sentence_embeddings(result.state.params, eval_sentences, result.data.vocab, result.data.lexicon)
    return [(param, value, r.metric, r.value) for r in evaluate(emb, vals)]


def worker_count():
    try:
        return max(1, int(os.environ.get("SOFTMCL_THREADS", "1")))
    except ValueError:
        return 1


def sweep(config, param, values, word, sent, lexicon, eval_sentences=None, out_dir=None):
    """One training run per value (same seed); rows of ``(param, value, metric, score)``."""
    if not values:
        raise ValueError("sweep needs at least one value")
    for v in values:
        sweep_config(config, param, v)  # validate before any training
    eval_sentences = sent if eval_sentences is None else eval_sentences
    jobs = [(config, param, v, word, sent, lexicon, eval_sentences, out_dir) for v in values]
    workers = min(worker_count(), len(jobs))
    if workers == 1:
        chunks = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_sweep_one, jobs))
    return [row for chunk in chunks for row in chunk]


def compare_modes(config, modes, word, sent, lexicon, eval_sentences=None):
    """Train one run per loss mode; ``{mode: collapse diagnostics}``."""
    eval_sentences = sent if eval_sentences is None else eval_sentences
    out = {}
    for mode in modes:
        result = train(config.replace(mode=mode), word, sent, None if mode == "selfsup" else lexicon)
        emb, vals = sentence_embeddings(result.state.params, eval_sentences, result.data.vocab, None)
        out[mode] = collapse_diagnostics(emb, vals)
    return out
