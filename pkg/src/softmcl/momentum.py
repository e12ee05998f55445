"""Momentum encoder averaging and the valence-tagged key queue."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .affect_data import SENTINEL
from .encoder import EncoderParams, clone_params
from .errors import DegenerateBatchError, ParameterError, ShapeError
from .losses import candidate_cross_entropy, soft_targets, supervised_targets, polarity_labels

DEFAULT_MU = 0.9
DEFAULT_CAPACITY = 1024


@dataclass
class MomentumState:
    params_m: EncoderParams
    mu: float = DEFAULT_MU

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ParameterError(f"momentum must lie in [0, 1], got {self.mu}")

    @classmethod
    def from_encoder(cls, params, mu=DEFAULT_MU):
        """Key encoder starts as an exact copy of the online encoder."""
        return cls(clone_params(params, requires_grad=False), mu)


def momentum_update(state, theta):
    """In place: ``theta_m <- mu * theta_m + (1 - mu) * theta``.  Returns ``state``."""
    if set(state.params_m) != set(theta):
        raise ShapeError("momentum and online parameter names differ")
    mu = state.mu
    for name, tm in state.params_m.items():
        t = theta[name].data
        if tm.shape != t.shape:
            raise ShapeError(f"{name}: momentum shape {tm.shape} != online shape {t.shape}")
        if mu == 1.0:
            continue
        if mu == 0.0:
            tm.data[...] = t
        else:
            tm.data[...] = mu * tm.data + (1.0 - mu) * t
    return state


class MomentumQueue:
    """Fixed-capacity FIFO of detached (representation, valence) pairs."""

    def __init__(self, capacity, dim):
        if capacity < 0:
            raise ParameterError("queue capacity must be non-negative")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._reps = np.zeros((0, self.dim))
        self._valences = np.zeros(0)

    def __len__(self):
        return self._valences.shape[0]

    @property
    def reps(self):
        return self._reps.copy()

    @property
    def valences(self):
        return self._valences.copy()

    def snapshot(self):
        return self._reps.copy(), self._valences.copy()

    def enqueue(self, reps, valences):
        """Append rows in order, skipping sentinel valences; evict oldest first."""
        reps = np.array(reps.data if isinstance(reps, ad.Tensor) else reps, dtype=np.float64)
        valences = np.asarray(valences, dtype=np.float64).reshape(-1)
        if reps.ndim != 2 or reps.shape[1] != self.dim:
            raise ShapeError(f"queue holds {self.dim}-vectors, got rows of shape {reps.shape}")
        if reps.shape[0] != valences.shape[0]:
            raise ShapeError(f"{reps.shape[0]} rows but {valences.shape[0]} valences")
        keep = valences != SENTINEL
        reps, valences = reps[keep], valences[keep]
        self._reps = np.concatenate([self._reps, reps])[-self.capacity :] if self.capacity else self._reps
        self._valences = np.concatenate([self._valences, valences])[-self.capacity :] if self.capacity else self._valences
        return self

    def restore(self, reps, valences):
        reps = np.asarray(reps, dtype=np.float64).reshape(-1, self.dim)
        valences = np.asarray(valences, dtype=np.float64).reshape(-1)
        if reps.shape[0] > self.capacity or reps.shape[0] != valences.shape[0]:
            raise ShapeError("restored queue contents do not fit")
        self._reps, self._valences = reps.copy(), valences.copy()
        return self


def enqueue(queue, reps, valences):
    return queue.enqueue(reps, valences)


def _union(batch, queue):
    m = len(batch)
    q_reps, q_vals = queue.snapshot() if queue is not None else (np.zeros((0, batch.reps.shape[1])), np.zeros(0))
    if q_reps.shape[0] and q_reps.shape[1] != batch.reps.shape[1]:
        raise ShapeError(f"queue dim {q_reps.shape[1]} != batch dim {batch.reps.shape[1]}")
    if m < 1 or (m < 2 and q_reps.shape[0] == 0):
        raise DegenerateBatchError("no candidates: need two batch rows or a non-empty queue")
    valid = np.concatenate([~np.eye(m, dtype=bool), np.ones((m, q_reps.shape[0]), dtype=bool)], axis=1)
    candidates = batch.reps
    if q_reps.shape[0]:
        # queue rows are constants: no gradient reaches them
        candidates = ad.concat([batch.reps, ad.Tensor(q_reps)], axis=0)
    return candidates, np.concatenate([batch.valences, q_vals]), valid


def loss_momentum_cl(batch, queue, tau):
    """Soft contrastive loss whose candidates are the other batch rows plus the queue."""
    candidates, cand_vals, valid = _union(batch, queue)
    targets = soft_targets(batch.valences, cand_vals, valid)
    return candidate_cross_entropy(batch.reps, candidates, targets, valid, tau)


def loss_momentum_supervised_cl(batch, queue, tau, threshold=5.0):
    """Hard-label variant over the same union of batch and queue candidates."""
    candidates, cand_vals, valid = _union(batch, queue)
    targets = supervised_targets(polarity_labels(batch.valences, threshold), polarity_labels(cand_vals, threshold), valid)
    if not targets.any():
        raise DegenerateBatchError("no anchor has a same-label candidate")
    return candidate_cross_entropy(batch.reps, candidates, targets, valid, tau)
