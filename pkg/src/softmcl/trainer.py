"""Pre-training loop: MLM plus word- and sentence-level contrastive learning.

One step draws a batch from the word corpus and a batch of valence-rated
sentences, then

1. masks the word batch (random tokens, then extra affective tokens),
2. encodes it once for the MLM loss and the word-level contrastive loss on
   a sample of lexicon-word positions,
3. encodes the sentence batch and contrasts the CLS vectors against each
   other and against the momentum queue,
4. takes an AdamW step on the weighted total, moves the momentum encoder
   towards the online one, and enqueues the momentum encoder's CLS keys.

Every random draw comes from a generator seeded by ``(seed, step, purpose)``,
so a run resumed from a checkpoint at step k continues exactly as the
uninterrupted run would.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses
from .affect_data import (
    CLS_ID,
    MASK_ID,
    SENTINEL,
    build_vocabulary,
    pad_batch,
    tokenize,
)
from .autodiff import Tensor
from .checkpoint import read_arrays, write_arrays
from .encoder import EncoderConfig, EncoderParams, encode, init_params, mlm_logits
from .errors import CheckpointFormatError, ConfigError, DegenerateBatchError, NumericalError
from .losses import ContrastiveBatch, LossBreakdown
from .momentum import (
    MomentumQueue,
    MomentumState,
    loss_momentum_cl,
    loss_momentum_supervised_cl,
    momentum_update,
)

logger = logging.getLogger(__name__)

MODES = ("soft", "hard", "selfsup", "mlm")
LOG_FIELDS = ("step", "mlm", "word_mcl", "sent_mcl", "total", "lr", "queue_len")

# sub-stream ids for the per-step generators
_BATCH, _MASK, _TOKENS, _VIEW, _DROPOUT = range(5)


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 2e-5
    warmup_fraction: float = 0.10
    total_steps: int = 20000
    tau: float = 0.1
    mu: float = 0.9
    queue_capacity: int = 1024
    lambda1: float = 0.25
    lambda2: float = 0.25
    mask_rate: float = 0.15
    affective_mask_rate: float = 0.30
    word_cl_sample: int = 256
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    mode: str = "soft"
    polarity_threshold: float = 5.0
    word_queue: bool = False
    hidden_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 128
    max_len: int = 128
    dropout: float = 0.0
    min_count: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("warmup_fraction", "mask_rate", "affective_mask_rate", "mu"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.total_steps < 1 or self.batch_size < 2:
            raise ConfigError("total_steps must be >= 1 and batch_size >= 2")
        if self.total_steps < self.warmup_steps:
            raise ConfigError("total_steps must be at least the warm-up length")
        if self.tau <= 0 or self.lr < 0 or self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("tau must be positive; lr and lambdas non-negative")
        if self.word_cl_sample < 2 or self.queue_capacity < 0:
            raise ConfigError("word_cl_sample must be >= 2 and queue_capacity >= 0")

    @property
    def warmup_steps(self):
        return int(round(self.warmup_fraction * self.total_steps))

    def encoder_config(self, vocab_size):
        return EncoderConfig(
            vocab_size=vocab_size,
            hidden_dim=self.hidden_dim,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            ffn_dim=self.ffn_dim,
            max_len=self.max_len,
            dropout=self.dropout,
            seed=self.seed,
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def with_overrides(self, pairs):
        """Apply ``{key: text}`` overrides, converting to each field's type."""
        types = {f.name: f.type for f in fields(self)}
        changes = {}
        for key, text in pairs.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _convert(key, types[key], text)
        return self.replace(**changes)

    def to_text(self):
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


def _convert(key, type_name, text):
    if not isinstance(text, str):
        return text
    try:
        if type_name == "bool":
            low = text.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if type_name == "int":
            return int(text)
        if type_name == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text.strip()


def parse_config_text(text):
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected key=value")
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path=None, overrides=None, base=None):
    config = base or TrainConfig()
    if path is not None:
        config = config.with_overrides(parse_config_text(Path(path).read_text(encoding="utf-8")))
    if overrides:
        config = config.with_overrides(overrides)
    return config


@dataclass
class TrainLogRecord:
    step: int
    mlm: float
    word_mcl: float
    sent_mcl: float
    total: float
    lr: float
    queue_len: int

    def csv_row(self):
        return [str(self.step)] + [repr(float(getattr(self, k))) for k in LOG_FIELDS[1:-1]] + [str(self.queue_len)]


def log_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_FIELDS)
    for r in records:
        w.writerow(r.csv_row())
    return buf.getvalue()


def read_log_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        TrainLogRecord(
            int(r["step"]),
            float(r["mlm"]),
            float(r["word_mcl"]),
            float(r["sent_mcl"]),
            float(r["total"]),
            float(r["lr"]),
            int(r["queue_len"]),
        )
        for r in rows
    ]


def lr_at(step, config):
    """Linear warm-up to ``config.lr`` at the end of warm-up, then linear decay to 0."""
    warm = config.warmup_steps
    if warm > 0 and step <= warm:
        return config.lr * step / warm
    span = config.total_steps - warm
    if span <= 0:
        return config.lr
    return config.lr * max(0.0, (config.total_steps - step) / span)


@dataclass
class PretrainData:
    vocab: object
    lexicon: object
    word: list
    sent: list

    @classmethod
    def build(cls, word_sentences, sent_sentences, lexicon, config, vocab=None):
        """Tokenise both corpora; sentence-level data keeps rated sentences only."""
        if config.mode == "selfsup":
            lexicon = None
        if vocab is None:
            vocab = build_vocabulary(list(word_sentences) + list(sent_sentences), config.min_count)
        word = [tokenize(s, vocab, lexicon, config.max_len) for s in word_sentences]
        sent = [tokenize(s, vocab, lexicon, config.max_len) for s in sent_sentences if s.sentence_valence != SENTINEL]
        if not word:
            raise ConfigError("word-level corpus is empty")
        if len(sent) < 2:
            raise ConfigError("sentence-level corpus needs at least two rated sentences")
        return cls(vocab, lexicon, word, sent)


@dataclass
class TrainState:
    params: EncoderParams
    momentum: MomentumState
    queue: MomentumQueue
    adam_m: dict
    adam_v: dict
    step: int = 0
    word_queue: MomentumQueue | None = None


def init_state(config, vocab_size):
    params = init_params(config.encoder_config(vocab_size))
    zeros = {k: np.zeros_like(t.data) for k, t in params.items()}
    return TrainState(
        params=params,
        momentum=MomentumState.from_encoder(params, config.mu),
        queue=MomentumQueue(config.queue_capacity, config.hidden_dim),
        adam_m=zeros,
        adam_v={k: v.copy() for k, v in zeros.items()},
        word_queue=MomentumQueue(config.queue_capacity, config.hidden_dim) if config.word_queue else None,
    )


def step_rng(seed, step, purpose):
    return np.random.default_rng([seed, step, purpose])


@dataclass
class MaskResult:
    ids: np.ndarray
    positions: np.ndarray  # [n, 2] (row, column)
    targets: np.ndarray


def apply_masking(ids, valences, valid, config, rng, vocab_size):
    """Two-stage MLM masking with 80/10/10 replacement.

    Stage one picks each non-special token with probability ``mask_rate``;
    stage two picks each remaining lexicon token (non-zero valence) with
    probability ``affective_mask_rate``.  Picked positions become MASK (80%),
    a random ordinary token (10%) or stay unchanged (10%).
    """
    ids = np.asarray(ids, dtype=np.int64)
    valid = np.asarray(valid, dtype=bool)
    eligible = valid.copy()
    eligible[:, 0] = False
    eligible &= ids != CLS_ID
    u1, u2, u3 = rng.random(ids.shape), rng.random(ids.shape), rng.random(ids.shape)
    random_ids = rng.integers(4, vocab_size, size=ids.shape) if vocab_size > 4 else np.full(ids.shape, MASK_ID)
    picked = eligible & (u1 < config.mask_rate)
    affective = eligible & ~picked & (np.asarray(valences) != SENTINEL)
    picked |= affective & (u2 < config.affective_mask_rate)
    masked = ids.copy()
    masked[picked & (u3 < 0.8)] = MASK_ID
    swap = picked & (u3 >= 0.8) & (u3 < 0.9)
    masked[swap] = random_ids[swap]
    positions = np.argwhere(picked)
    return MaskResult(masked, positions, ids[picked])


def sample_affective_tokens(encoded, valences, k, rng):
    """Uniformly sample up to ``k`` lexicon-token positions (CLS excluded).

    Returns ``(ContrastiveBatch or None, positions)``; None when fewer than
    two such tokens exist.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    valences = np.asarray(valences, dtype=np.float64)
    ok = encoded.attention_mask & (valences != SENTINEL)
    ok[:, 0] = False
    flat = np.flatnonzero(ok)
    if flat.size > k:
        flat = np.sort(rng.choice(flat, size=k, replace=False))
    if flat.size < 2:
        return None, flat
    b, s, d = encoded.hidden.shape
    reps = ad.gather_rows(ad.reshape(encoded.hidden, (b * s, d)), flat)
    return ContrastiveBatch(reps, valences.reshape(-1)[flat], origin="word"), flat


def _sentence_loss(config, cls_reps, valences, queue, positives=None):
    batch = ContrastiveBatch(cls_reps, valences, origin="sentence")
    if config.mode == "soft":
        return loss_momentum_cl(batch, queue, config.tau)
    if config.mode == "hard":
        return loss_momentum_supervised_cl(batch, queue, config.tau, config.polarity_threshold)
    negatives = queue.reps if len(queue) else None
    return losses.loss_selfsup_cl(cls_reps, positives, config.tau, negatives=negatives)


def _word_loss(config, wbatch, queue):
    if config.mode == "soft":
        if queue is not None:
            return loss_momentum_cl(wbatch, queue, config.tau)
        return losses.loss_soft_cl(wbatch, config.tau)
    try:
        if queue is not None:
            return loss_momentum_supervised_cl(wbatch, queue, config.tau, config.polarity_threshold)
        labels = losses.polarity_labels(wbatch.valences, config.polarity_threshold)
        return losses.loss_supervised_cl(wbatch, labels, config.tau)
    except DegenerateBatchError:
        return None


class TrainingAborted(NumericalError):
    def __init__(self, step, message, diagnostic):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.diagnostic = diagnostic


def adamw_update(state, config, lr):
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for name, p in state.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + config.adam_eps) + config.weight_decay * p.data
        p.data -= lr * update
        p.grad = None


def _forward_backward(state, word_batch, sent_batch, config, vocab_size, step):
    params = state.params
    dropout_rng = step_rng(config.seed, step, _DROPOUT)

    # word level: MLM + contrast over sampled lexicon tokens
    w_ids, w_valid, w_vals = pad_batch(word_batch)
    masking = apply_masking(w_ids, w_vals, w_valid, config, step_rng(config.seed, step, _MASK), vocab_size)
    w_enc = encode(params, masking.ids, w_valid, train_mode=True, rng=dropout_rng)
    if len(masking.positions):
        b, s, d = w_enc.hidden.shape
        flat = masking.positions[:, 0] * s + masking.positions[:, 1]
        rows = ad.gather_rows(ad.reshape(w_enc.hidden, (b * s, d)), flat)
        mlm = losses.loss_mlm(mlm_logits(params, rows), masking.targets)
    else:
        mlm = Tensor(0.0)
    word = None
    if config.mode in ("soft", "hard"):
        wbatch, _ = sample_affective_tokens(w_enc, w_vals, config.word_cl_sample, step_rng(config.seed, step, _TOKENS))
        if wbatch is not None:
            word = _word_loss(config, wbatch, state.word_queue)
    if word is None:
        word = Tensor(0.0)

    # sentence level: CLS vectors against each other and the queue
    s_ids, s_valid, s_vals = pad_batch(sent_batch)
    sent_valences = s_vals[:, 0]
    sent = Tensor(0.0)
    if config.mode != "mlm":
        s_enc = encode(params, s_ids, s_valid, train_mode=True, rng=dropout_rng)
        positives = None
        if config.mode == "selfsup":
            view = apply_masking(s_ids, s_vals, s_valid, config, step_rng(config.seed, step, _VIEW), vocab_size)
            with ad.no_grad():
                positives = encode(state.momentum.params_m, view.ids, s_valid).cls.data
        sent = _sentence_loss(config, s_enc.cls, sent_valences, state.queue, positives)

    total = losses.combine(mlm, word, sent, config.lambda1, config.lambda2)
    breakdown = losses.loss_combined(mlm, word, sent, config.lambda1, config.lambda2)
    if not np.isfinite(breakdown.total):
        raise NumericalError("non-finite total loss")
    if isinstance(total, Tensor) and total.requires_grad:
        total.backward()
    return breakdown, (masking.ids, w_valid, w_vals), (s_ids, s_valid, sent_valences)


def _update(state, config, step, word_inputs, sent_inputs):
    state.step = step
    lr = lr_at(step, config)
    adamw_update(state, config, lr)
    for name, t in state.params.items():
        if not np.isfinite(t.data).all():
            raise NumericalError(f"parameter {name} became non-finite")
    momentum_update(state.momentum, state.params)

    with ad.no_grad():
        s_ids, s_valid, sent_valences = sent_inputs
        keys = encode(state.momentum.params_m, s_ids, s_valid).cls
        state.queue.enqueue(ad.l2_normalize(keys, axis=1).data, sent_valences)
        if state.word_queue is not None:
            w_ids, w_valid, w_vals = word_inputs
            w_keys = encode(state.momentum.params_m, w_ids, w_valid)
            wk, _ = sample_affective_tokens(w_keys, w_vals, config.word_cl_sample, step_rng(config.seed, step, _TOKENS))
            if wk is not None:
                state.word_queue.enqueue(ad.l2_normalize(wk.reps, axis=1).data, wk.valences)
    return lr


def train_step(state, word_batch, sent_batch, config, vocab_size):
    """One optimisation step; mutates ``state`` and returns ``(state, record)``.

    Any NaN/Inf along the way raises ``TrainingAborted`` carrying the step
    number and the offending batches.
    """
    step = state.step + 1
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            breakdown, word_inputs, sent_inputs = _forward_backward(state, word_batch, sent_batch, config, vocab_size, step)
            lr = _update(state, config, step, word_inputs, sent_inputs)
    except NumericalError as exc:
        diagnostic = {
            "step": step,
            "error": str(exc),
            "word_batch": [list(s.token_ids) for s in word_batch],
            "sent_batch": [list(s.token_ids) for s in sent_batch],
            "sent_valences": [float(s.sentence_valence) for s in sent_batch],
        }
        state.params.zero_grad()
        raise TrainingAborted(step, str(exc), diagnostic) from exc

    record = TrainLogRecord(step, breakdown.mlm, breakdown.word_mcl, breakdown.sent_mcl, breakdown.total, lr, len(state.queue))
    return state, record


def draw_batches(data, config, step):
    rng = step_rng(config.seed, step, _BATCH)
    nw, ns = len(data.word), len(data.sent)
    wi = rng.choice(nw, size=min(config.batch_size, nw), replace=False)
    si = rng.choice(ns, size=min(config.batch_size, ns), replace=False)
    return [data.word[i] for i in wi], [data.sent[i] for i in si]


def run(state, data, config, until=None, on_record=None, checkpoint_path=None, vocab_digest=None):
    """Train from ``state.step + 1`` through ``until`` (default ``total_steps``)."""
    until = config.total_steps if until is None else min(until, config.total_steps)
    records = []
    while state.step < until:
        word_batch, sent_batch = draw_batches(data, config, state.step + 1)
        state, record = train_step(state, word_batch, sent_batch, config, len(data.vocab))
        records.append(record)
        if on_record is not None:
            on_record(record)
        if checkpoint_path is not None and config.checkpoint_every and state.step % config.checkpoint_every == 0:
            save_checkpoint(state, checkpoint_path, vocab_digest)
    return state, records


# -- checkpoints ----------------------------------------------------------------


def state_arrays(state, vocab_digest=None):
    arrays = {}
    for name, t in state.params.items():
        arrays["params/" + name] = t.data
        arrays["momentum/" + name] = state.momentum.params_m[name].data
        arrays["adam_m/" + name] = state.adam_m[name]
        arrays["adam_v/" + name] = state.adam_v[name]
    for prefix, queue in (("queue/", state.queue), ("word_queue/", state.word_queue)):
        if queue is None:
            continue
        reps, vals = queue.snapshot()
        arrays[prefix + "reps"] = reps
        arrays[prefix + "valences"] = vals
        arrays[prefix + "capacity"] = np.float64(queue.capacity)
    arrays["state/step"] = np.float64(state.step)
    arrays["state/mu"] = np.float64(state.momentum.mu)
    arrays["meta/encoder_config"] = state.params.config.to_array()
    if vocab_digest is not None:
        arrays["meta/vocab_hash"] = np.float64(vocab_digest)
    return arrays


def save_checkpoint(state, path, vocab_digest=None):
    write_arrays(path, state_arrays(state, vocab_digest))


def _queue_from(arrays, prefix, dim):
    if prefix + "capacity" not in arrays:
        return None
    queue = MomentumQueue(int(arrays[prefix + "capacity"]), dim)
    return queue.restore(arrays[prefix + "reps"], arrays[prefix + "valences"])


def state_from_arrays(arrays):
    try:
        config = EncoderConfig.from_array(arrays["meta/encoder_config"])
        groups = {g: {} for g in ("params", "momentum", "adam_m", "adam_v")}
        for key, value in arrays.items():
            group, _, name = key.partition("/")
            if group in groups:
                groups[group][name] = value
        params = EncoderParams.from_arrays(config, groups["params"])
        params_m = EncoderParams.from_arrays(config, groups["momentum"], requires_grad=False)
        queue = _queue_from(arrays, "queue/", config.hidden_dim)
        if queue is None:
            raise KeyError("queue/capacity")
        state = TrainState(
            params=params,
            momentum=MomentumState(params_m, float(arrays["state/mu"])),
            queue=queue,
            adam_m={k: v.copy() for k, v in groups["adam_m"].items()},
            adam_v={k: v.copy() for k, v in groups["adam_v"].items()},
            step=int(arrays["state/step"]),
            word_queue=_queue_from(arrays, "word_queue/", config.hidden_dim),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointFormatError(f"incomplete checkpoint: {exc}") from None
    if set(state.adam_m) != set(params) or set(state.adam_v) != set(params):
        raise CheckpointFormatError("optimizer moments do not match parameters")
    return state


def load_checkpoint(path):
    """Returns ``(state, vocab_digest or None)``."""
    arrays = read_arrays(path)
    digest = int(arrays["meta/vocab_hash"]) if "meta/vocab_hash" in arrays else None
    return state_from_arrays(arrays), digest


# -- frozen-embedding evaluation ----------------------------------------------


def embed_sentences(params, sentences, batch_size=128):
    """CLS vectors (eval mode) for tokenised sentences, as a numpy array."""
    out = []
    with ad.no_grad():
        for start in range(0, len(sentences), batch_size):
            ids, valid, _ = pad_batch(sentences[start : start + batch_size])
            out.append(encode(params, ids, valid).cls.data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, params.config.hidden_dim))


def embed_tokens(params, sentences, batch_size=128):
    """Per-token vectors for lexicon tokens: ``(vectors, valences, (sentence, position) ids)``."""
    vecs, vals, where = [], [], []
    with ad.no_grad():
        for start in range(0, len(sentences), batch_size):
            chunk = sentences[start : start + batch_size]
            ids, valid, v = pad_batch(chunk)
            hidden = encode(params, ids, valid).hidden.data
            ok = valid & (v != SENTINEL)
            ok[:, 0] = False
            for b, s in zip(*np.nonzero(ok)):
                vecs.append(hidden[b, s])
                vals.append(v[b, s])
                where.append((start + b, s))
    d = params.config.hidden_dim
    return (np.array(vecs).reshape(-1, d), np.array(vals), where)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


__all__ = [
    "TrainConfig",
    "TrainLogRecord",
    "TrainState",
    "PretrainData",
    "MaskResult",
    "LossBreakdown",
    "apply_masking",
    "sample_affective_tokens",
    "train_step",
    "run",
    "init_state",
    "lr_at",
    "save_checkpoint",
    "load_checkpoint",
    "embed_sentences",
    "embed_tokens",
    "log_csv",
    "read_log_csv",
    "load_config",
]
