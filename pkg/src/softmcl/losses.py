"""Contrastive and language-modelling objectives.

All contrastive losses share one shape: every anchor row has a set of
candidate rows, a target distribution over those candidates, and the
model's softmax distribution over the same candidates built from
temperature-scaled cosine similarities.  The loss is the cross-entropy
between the two, summed over anchors.  They differ only in the targets:

* self-supervised: one-hot on the anchor's own positive view
* supervised (hard labels): uniform over same-label rows
* soft: proportional to valence similarity with each candidate

Representations are L2-normalised here, not in the encoder.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .affect_data import SENTINEL, Y_MAX, Y_MIN
from .autodiff import Tensor
from .errors import DegenerateBatchError, MaskedValenceError, ParameterError, ShapeError

DEFAULT_LAMBDA = 0.25


class EmptyMaskWarning(UserWarning):
    """MLM was asked for a loss with no masked positions."""


@dataclass
class ContrastiveBatch:
    reps: Tensor
    valences: np.ndarray
    origin: str = "sentence"

    def __post_init__(self):
        self.reps = ad.as_tensor(self.reps)
        self.valences = np.asarray(self.valences, dtype=np.float64).reshape(-1)
        if self.reps.ndim != 2 or self.reps.shape[0] != self.valences.shape[0]:
            raise ShapeError(f"reps {self.reps.shape} do not align with {self.valences.shape[0]} valences")
        if np.any(self.valences == SENTINEL):
            raise MaskedValenceError("contrastive batch contains sentinel (0) valences; filter them first")
        if np.any((self.valences < Y_MIN) | (self.valences > Y_MAX)):
            raise MaskedValenceError("contrastive batch valences must lie in [1, 9]")

    def __len__(self):
        return self.valences.shape[0]


@dataclass
class LossBreakdown:
    mlm: float
    word_mcl: float
    sent_mcl: float
    total: float
    lambda1: float = DEFAULT_LAMBDA
    lambda2: float = DEFAULT_LAMBDA


def sentiment_similarity(y1, y2):
    """``1 - |y1 - y2| / (y_max - y_min)``; works elementwise on arrays."""
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    if np.any(y1 == SENTINEL) or np.any(y2 == SENTINEL):
        raise MaskedValenceError("sentiment similarity is undefined for the sentinel valence")
    for y in (y1, y2):
        if np.any((y < Y_MIN) | (y > Y_MAX)):
            raise MaskedValenceError("valence outside [1, 9]")
    out = 1.0 - np.abs(y1 - y2) / (Y_MAX - Y_MIN)
    return float(out) if out.ndim == 0 else out


def similarity_matrix(anchor_valences, candidate_valences):
    return sentiment_similarity(
        np.asarray(anchor_valences, dtype=np.float64)[:, None],
        np.asarray(candidate_valences, dtype=np.float64)[None, :],
    )


def _check_tau(tau):
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")


def normalize_weights(weights, valid):
    """Row-normalise non-negative weights over valid candidates.

    Rows whose valid weights sum to zero become all-zero, so the anchor
    drops out of the loss instead of producing NaN.
    """
    w = np.where(valid, weights, 0.0)
    total = w.sum(axis=1, keepdims=True)
    return np.divide(w, total, out=np.zeros_like(w), where=total > 0)


def candidate_cross_entropy(anchors, candidates, targets, valid, tau):
    """``-sum_i sum_c targets[i,c] * log softmax_c(a_i . c / tau)`` over valid c.

    ``anchors`` and ``candidates`` are raw representations; both get
    L2-normalised.  ``targets`` are constant rows (already normalised).
    """
    _check_tau(tau)
    za = ad.l2_normalize(anchors, axis=1)
    zc = ad.l2_normalize(candidates, axis=1)
    logits = (za @ ad.transpose(zc)) * (1.0 / tau)
    valid = np.asarray(valid, dtype=bool)
    live = valid.any(axis=1)
    if not live.all():
        logits = logits[np.flatnonzero(live)]
        valid, targets = valid[live], targets[live]
    if logits.shape[0] == 0:
        return Tensor(0.0)
    logp = ad.log_softmax(logits, axis=1, mask=valid)
    return -ad.tensor_sum(logp * targets)


def _off_diagonal(m):
    return ~np.eye(m, dtype=bool)


def loss_selfsup_cl(anchors, positives, tau, negatives=None):
    """InfoNCE: row i of ``positives`` is the positive for anchor i.

    The candidates for every anchor are all positive rows (the other rows
    serve as in-batch negatives) followed by any extra ``negatives``.
    """
    _check_tau(tau)
    anchors, positives = ad.as_tensor(anchors), ad.as_tensor(positives)
    if anchors.shape != positives.shape or anchors.ndim != 2:
        raise ShapeError(f"anchors {anchors.shape} and positives {positives.shape} must be equal [n, d]")
    n = anchors.shape[0]
    candidates = positives
    if negatives is not None and len(negatives):
        candidates = ad.concat([positives, ad.as_tensor(negatives)], axis=0)
    total = candidates.shape[0]
    targets = np.zeros((n, total))
    targets[np.arange(n), np.arange(n)] = 1.0
    return candidate_cross_entropy(anchors, candidates, targets, np.ones((n, total), dtype=bool), tau)


def polarity_labels(valences, threshold=5.0):
    """+1 above ``threshold``, -1 below, 0 at it."""
    v = np.asarray(valences, dtype=np.float64)
    return np.sign(v - threshold).astype(np.int64)


def supervised_targets(anchor_labels, candidate_labels, valid):
    same = (np.asarray(anchor_labels)[:, None] == np.asarray(candidate_labels)[None, :]) & valid
    return normalize_weights(same.astype(np.float64), valid)


def loss_supervised_cl(batch, labels, tau):
    """Hard-label supervised contrastive loss; anchors with no positive are skipped."""
    _check_tau(tau)
    labels = np.asarray(labels).reshape(-1)
    m = len(batch)
    if labels.shape[0] != m:
        raise ShapeError(f"{labels.shape[0]} labels for {m} rows")
    valid = _off_diagonal(m)
    targets = supervised_targets(labels, labels, valid)
    if not targets.any():
        raise DegenerateBatchError("no anchor has a same-label partner")
    return candidate_cross_entropy(batch.reps, batch.reps, targets, valid, tau)


def soft_targets(anchor_valences, candidate_valences, valid):
    return normalize_weights(similarity_matrix(anchor_valences, candidate_valences), valid)


def loss_soft_cl(batch, tau):
    """Valence-weighted contrastive loss over in-batch candidates (self excluded)."""
    _check_tau(tau)
    m = len(batch)
    if m < 2:
        raise DegenerateBatchError(f"soft contrastive loss needs at least 2 rows, got {m}")
    valid = _off_diagonal(m)
    targets = soft_targets(batch.valences, batch.valences, valid)
    return candidate_cross_entropy(batch.reps, batch.reps, targets, valid, tau)


def loss_mlm(logits, targets):
    """Mean cross-entropy over the masked positions."""
    logits = ad.as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise ShapeError(f"logits {logits.shape} do not match {targets.shape[0]} targets")
    n = targets.shape[0]
    if n == 0:
        warnings.warn("no masked positions; MLM loss is 0", EmptyMaskWarning, stacklevel=2)
        return Tensor(0.0)
    logp = ad.log_softmax(logits, axis=1)
    picked = logp[np.arange(n), targets]
    return -ad.mean(picked)


def combine(mlm, word_mcl, sent_mcl, lambda1=DEFAULT_LAMBDA, lambda2=DEFAULT_LAMBDA):
    """``mlm + lambda1 * word + lambda2 * sent`` for floats or Tensors."""
    return mlm + lambda1 * word_mcl + lambda2 * sent_mcl


def loss_combined(mlm, word_mcl, sent_mcl, lambda1=DEFAULT_LAMBDA, lambda2=DEFAULT_LAMBDA):
    if lambda1 < 0 or lambda2 < 0:
        raise ParameterError("loss weights must be non-negative")
    mlm, word_mcl, sent_mcl = float(mlm), float(word_mcl), float(sent_mcl)
    total = combine(mlm, word_mcl, sent_mcl, lambda1, lambda2)
    return LossBreakdown(mlm, word_mcl, sent_mcl, total, lambda1, lambda2)
