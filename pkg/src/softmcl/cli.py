"""Command-line entry point: ``softmcl <command> [flags]``.

Exit codes: 0 success, 1 usage, 2 missing or unreadable input,
3 numerical failure, 4 incompatible checkpoint/vocabulary.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

from . import experiments, synth, trainer
from .affect_data import Vocabulary, load_corpus, load_lexicon
from .errors import (
    CheckpointFormatError,
    ConfigError,
    CorpusFormatError,
    EmptyLexiconError,
    LexiconFormatError,
    NumericalError,
    ValenceRangeError,
    VocabularyError,
)
from .metrics import MetricReport, reports_to_csv

logger = logging.getLogger("softmcl")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC, EXIT_INCOMPATIBLE = 0, 1, 2, 3, 4

LOG_NAME = "train_log.csv"
CHECKPOINT_NAME = "checkpoint.smcl"
VOCAB_NAME = "vocab.txt"
CONFIG_NAME = "config.txt"
DIAGNOSTIC_NAME = "diagnostic.json"


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class IncompatibleError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write_text(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _existing(path, what):
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} not found: {p}")
    return p


def _lexicon(path):
    return load_lexicon(_existing(path, "lexicon"))


def _corpus(path, what):
    return load_corpus(_existing(path, what))


def _overrides(pairs):
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _config(args):
    path = _existing(args.config, "config") if args.config else None
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return trainer.load_config(path, overrides)


def _training_inputs(args, need_lexicon=True):
    lexicon = _lexicon(args.lexicon) if need_lexicon else None
    word = _corpus(args.word_corpus, "word-corpus")
    sent = _corpus(args.sent_corpus, "sent-corpus") if args.sent_corpus else word
    return lexicon, word, sent


# -- commands -------------------------------------------------------------------


def cmd_pretrain(args):
    config = _config(args)
    lexicon, word, sent = _training_inputs(args, need_lexicon=config.mode != "selfsup")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, log_path, vocab_path = out / CHECKPOINT_NAME, out / LOG_NAME, out / VOCAB_NAME

    vocab = None
    if args.resume:
        if not ckpt.is_file() or not vocab_path.is_file():
            raise InputError(f"nothing to resume in {out}")
        vocab = Vocabulary.load(vocab_path)
    data = trainer.PretrainData.build(word, sent, lexicon, config, vocab=vocab)
    digest = data.vocab.digest()

    if args.resume:
        state, saved_digest = trainer.load_checkpoint(ckpt)
        if saved_digest is not None and saved_digest != digest:
            raise IncompatibleError("checkpoint was trained with a different vocabulary")
        if state.params.config != config.encoder_config(len(data.vocab)):
            raise IncompatibleError("checkpoint encoder shape differs from the configuration")
        done = [r for r in trainer.read_log_csv(log_path) if r.step <= state.step] if log_path.is_file() else []
        if len(done) != state.step:
            raise IncompatibleError(f"log has {len(done)} rows for a checkpoint at step {state.step}")
    else:
        state = trainer.init_state(config, len(data.vocab))
        done = []
        data.vocab.save(vocab_path)
        _write_text(out / CONFIG_NAME, config.to_text())

    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(trainer.log_csv(done))

        def on_record(record):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(record.csv_row())
            fh.flush()

        try:
            state, _ = trainer.run(state, data, config, until=args.stop_after, on_record=on_record,
                                   checkpoint_path=ckpt, vocab_digest=digest)
        except trainer.TrainingAborted as exc:
            trainer.write_json(out / DIAGNOSTIC_NAME, exc.diagnostic)
            raise
    trainer.save_checkpoint(state, ckpt, digest)
    print(f"trained to step {state.step}; log {log_path}")
    return EXIT_OK


def _load_model(args):
    state, digest = trainer.load_checkpoint(_existing(args.checkpoint, "checkpoint"))
    vocab_path = Path(args.vocab) if args.vocab else Path(args.checkpoint).with_name(VOCAB_NAME)
    vocab = Vocabulary.load(_existing(vocab_path, "vocab"))
    if digest is not None and digest != vocab.digest():
        raise IncompatibleError(f"vocabulary {vocab_path} does not match the checkpoint")
    if len(vocab) != state.params.config.vocab_size:
        raise IncompatibleError("vocabulary size does not match the checkpoint")
    return state, vocab


def _embeddings(args, state, vocab):
    sentences = _corpus(args.corpus, "corpus")
    if args.level == "word":
        lexicon = _lexicon(args.lexicon)
        return experiments.word_embeddings(state.params, sentences, vocab, lexicon)
    return experiments.sentence_embeddings(state.params, sentences, vocab)


def cmd_eval(args):
    state, vocab = _load_model(args)
    emb, vals = _embeddings(args, state, vocab)
    text = reports_to_csv(experiments.evaluate(emb, vals))
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_export(args):
    state, vocab = _load_model(args)
    emb, vals = _embeddings(args, state, vocab)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "valence"] + [f"dim{i}" for i in range(emb.shape[1])])
    for i, (row, v) in enumerate(zip(emb, vals)):
        w.writerow([i, repr(float(v))] + [repr(float(x)) for x in row])
    _write_text(args.out, buf.getvalue())
    return EXIT_OK


def _parse_values(param, text):
    items = [t.strip() for t in (text or "").split(",") if t.strip()]
    if not items:
        raise UsageError("--values must list at least one value")
    try:
        return [int(t) if param == "queue" else float(t) for t in items]
    except ValueError:
        raise UsageError(f"bad --values for {param}: {text!r}") from None


def cmd_sweep(args):
    values = _parse_values(args.param, args.values)
    config = _config(args)
    lexicon, word, sent = _training_inputs(args, need_lexicon=config.mode != "selfsup")
    eval_sentences = _corpus(args.eval_corpus, "eval-corpus") if args.eval_corpus else None
    rows = experiments.sweep(config, args.param, values, word, sent, lexicon, eval_sentences, args.out_dir)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "value", "metric", "score"])
    for param, value, metric, score in rows:
        w.writerow([param, value, metric, repr(float(score))])
    _write_text(Path(args.out_dir) / "sweep.csv", buf.getvalue())
    return EXIT_OK


def cmd_compare(args):
    modes = [m.strip() for m in args.mode.split(",") if m.strip()]
    bad = [m for m in modes if m not in ("selfsup", "hard", "soft")]
    if not modes or bad:
        raise UsageError(f"--mode takes a comma list of selfsup, hard, soft (got {args.mode!r})")
    overrides = _overrides(args.set)
    overrides["polarity_threshold"] = str(args.polarity_threshold)
    args.set = [f"{k}={v}" for k, v in overrides.items()]
    config = _config(args)
    lexicon, word, sent = _training_inputs(args, need_lexicon=modes != ["selfsup"])
    results = experiments.compare_modes(config, modes, word, sent, lexicon)
    out = Path(args.out_dir)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "metric", "value"])
    n = len([s for s in sent if s.sentence_valence])
    for mode, diag in results.items():
        reports = [MetricReport(k, float("nan") if v is None else v, n) for k, v in diag.items()]
        _write_text(out / mode / "diagnostics.csv", reports_to_csv(reports))
        for r in reports:
            w.writerow([mode, r.metric, repr(float(r.value))])
    _write_text(out / "diagnostics.csv", buf.getvalue())
    return EXIT_OK


def cmd_gen_synth(args):
    if args.n < 10:
        raise UsageError("--n must be at least 10")
    if args.vocab < 2:
        raise UsageError("--vocab must be at least 2")
    lexicon, corpus = synth.generate(args.n, args.vocab, args.seed)
    lex_path, corpus_path = synth.write(args.out, lexicon, corpus)
    print(f"wrote {lex_path} and {corpus_path}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _training_flags(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--lexicon", help="word<TAB>valence lexicon")
    p.add_argument("--word-corpus", required=True, help="JSONL corpus for MLM and word-level contrast")
    p.add_argument("--sent-corpus", help="JSONL corpus of rated sentences (default: the word corpus)")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")


def _model_flags(p):
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", help="vocabulary file (default: vocab.txt next to the checkpoint)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--level", choices=("sentence", "word"), default="sentence")
    p.add_argument("--lexicon", help="needed for --level word")


def build_parser():
    parser = _Parser(prog="softmcl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("pretrain", help="pre-train an encoder")
    _training_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out-dir")
    p.add_argument("--stop-after", type=int, metavar="STEP", help="stop (and checkpoint) after this step")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="probe and collapse metrics for frozen embeddings")
    _model_flags(p)
    p.add_argument("--out", help="metrics CSV (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="one run per hyper-parameter value")
    _training_flags(p)
    p.add_argument("--param", required=True, choices=sorted(experiments.SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--eval-corpus", help="rated sentences for the probe (default: the sentence corpus)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare-losses", help="collapse diagnostics per contrastive mode")
    _training_flags(p)
    p.add_argument("--mode", default="selfsup,hard,soft", help="comma list of selfsup, hard, soft")
    p.add_argument("--polarity-threshold", type=float, default=5.0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export-embeddings", help="write vectors and valences as CSV")
    _model_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gen-synth", help="generate a synthetic lexicon and corpus")
    p.add_argument("--n", type=int, default=1000, help="number of sentences")
    p.add_argument("--vocab", type=int, default=200, help="number of lexicon words")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, FileNotFoundError) as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (LexiconFormatError, EmptyLexiconError, CorpusFormatError, ValenceRangeError) as exc:
        print(f"bad input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except trainer.TrainingAborted as exc:
        print(f"numerical failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IncompatibleError, CheckpointFormatError, VocabularyError) as exc:
        print(f"incompatible: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE


if __name__ == "__main__":
    sys.exit(main())
