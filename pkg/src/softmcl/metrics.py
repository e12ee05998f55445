"""Correlation/error metrics, a ridge valence probe, and collapse diagnostics."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from .losses import similarity_matrix

logger = logging.getLogger(__name__)

PROBE_RIDGE = 1e-3
PROBE_FOLDS = 5
ALIGNMENT_DELTA = 0.9


class UndefinedCorrelationError(ValueError):
    """A correlation was requested for an input with no variation."""


@dataclass(frozen=True)
class MetricReport:
    metric: str
    value: float
    n: int


def _pair(x, y, min_len=2):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < min_len:
        raise ValueError(f"need at least {min_len} points, got {x.shape[0]}")
    return x, y


def pearson_r(x, y):
    x, y = _pair(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(xc, xc), np.dot(yc, yc)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("zero variance input")
    r = np.dot(xc, yc) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def average_ranks(x):
    """1-based ranks with ties given the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], x.shape[0]]
    mid = (starts + ends + 1) / 2.0
    ranks = np.empty(x.shape[0])
    ranks[order] = np.repeat(mid, ends - starts)
    return ranks


def spearman_rho(x, y):
    x, y = _pair(x, y)
    return pearson_r(average_ranks(x), average_ranks(y))


def kendall_tau(x, y):
    """Kendall's tau-b (tie corrected)."""
    x, y = _pair(x, y)
    n = x.shape[0]
    iu = np.triu_indices(n, k=1)
    dx = np.sign(x[:, None] - x[None, :])[iu]
    dy = np.sign(y[:, None] - y[None, :])[iu]
    s = float(np.sum(dx * dy))
    n0 = n * (n - 1) / 2.0
    ties_x = n0 - np.count_nonzero(dx)
    ties_y = n0 - np.count_nonzero(dy)
    denom = np.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0:
        raise UndefinedCorrelationError("all values tied")
    return float(np.clip(s / denom, -1.0, 1.0))


def mae(pred, gold):
    pred, gold = _pair(pred, gold, min_len=1)
    return float(np.mean(np.abs(pred - gold)))


def accuracy(pred, gold):
    pred = np.asarray(pred).reshape(-1)
    gold = np.asarray(gold).reshape(-1)
    if pred.shape != gold.shape or pred.shape[0] < 1:
        raise ValueError("accuracy needs equal, non-empty label sequences")
    return float(np.mean(pred == gold))


def ridge_fit(x, y, alpha=PROBE_RIDGE):
    """Closed-form ridge with an unpenalised intercept.

    Solves ``(Xc^T Xc / n + alpha I) w = Xc^T yc / n`` on centred data, so
    duplicating every row leaves the solution unchanged.
    """
    n = x.shape[0]
    mx, my = x.mean(axis=0), y.mean()
    xc, yc = x - mx, y - my
    gram = xc.T @ xc / n + alpha * np.eye(x.shape[1])
    w = np.linalg.solve(gram, xc.T @ yc / n)
    return w, my - mx @ w


def probe_folds(x, y, k=PROBE_FOLDS, seed=0):
    """Fold id per row; identical (x, y) rows always share a fold."""
    keys = np.concatenate([x, y[:, None]], axis=1)
    _, group = np.unique(keys, axis=0, return_inverse=True)
    group = group.reshape(-1)
    n_groups = int(group.max()) + 1
    perm = np.random.default_rng(seed).permutation(n_groups)
    fold_of_group = np.empty(n_groups, dtype=np.int64)
    fold_of_group[perm] = np.arange(n_groups) % k
    return fold_of_group[group]


def probe_predictions(embeddings, valences, k=PROBE_FOLDS, alpha=PROBE_RIDGE, seed=0):
    """Out-of-fold ridge predictions; rows of skipped folds are NaN."""
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(valences, dtype=np.float64).reshape(-1)
    folds = probe_folds(x, y, k, seed)
    pred = np.full(y.shape[0], np.nan)
    for f in range(k):
        test = folds == f
        train = ~test
        if not test.any() or train.sum() < 2:
            continue
        try:
            w, b = ridge_fit(x[train], y[train], alpha)
        except np.linalg.LinAlgError:
            logger.warning("probe fold %d is singular; skipped", f)
            continue
        pred[test] = x[test] @ w + b
    return pred


def valence_probe(embeddings, valences, k=PROBE_FOLDS, alpha=PROBE_RIDGE, seed=0):
    """Cross-validated linear probe from frozen embeddings to valence.

    Returns ``MetricReport`` rows for Pearson r, MAE, Spearman rho and
    Kendall tau-b of the out-of-fold predictions.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(valences, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"embeddings {x.shape} do not align with {y.shape[0]} valences")
    if x.shape[0] < 10:
        raise ValueError("valence probe needs at least 10 samples")
    pred = probe_predictions(x, y, k, alpha, seed)
    ok = ~np.isnan(pred)
    p, g = pred[ok], y[ok]
    n = int(ok.sum())
    reports = []
    for name, fn in (("pearson_r", pearson_r), ("mae", mae), ("spearman_rho", spearman_rho), ("kendall_tau", kendall_tau)):
        try:
            value = fn(p, g)
        except UndefinedCorrelationError:
            value = float("nan")
        reports.append(MetricReport(name, value, n))
    return reports


def collapse_diagnostics(embeddings, valences):
    """Alignment, uniformity and valence/cosine rank agreement.

    Embeddings are L2-normalised first.  Over all unordered pairs:

    * alignment: mean squared distance of pairs with valence similarity >= 0.9
      (None when no pair qualifies)
    * uniformity: ``log mean exp(-2 * squared distance)``; 0 means fully collapsed
    * valence_rank_corr: Spearman between pairwise valence similarity and
      pairwise cosine (None when either side is constant)
    """
    x = np.asarray(embeddings, dtype=np.float64)
    v = np.asarray(valences, dtype=np.float64).reshape(-1)
    if x.shape[0] < 10:
        raise ValueError("collapse diagnostics need at least 10 samples")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    z = x / np.maximum(norms, 1e-12)
    iu = np.triu_indices(x.shape[0], k=1)
    cos = (z @ z.T)[iu]
    sq = np.maximum(2.0 - 2.0 * cos, 0.0)
    delta = similarity_matrix(v, v)[iu]
    close = delta >= ALIGNMENT_DELTA
    alignment = float(sq[close].mean()) if close.any() else None
    uniformity = float(np.log(np.mean(np.exp(-2.0 * sq))))
    try:
        rank_corr = spearman_rho(delta, cos)
    except UndefinedCorrelationError:
        rank_corr = None
    return {"alignment": alignment, "uniformity": uniformity, "valence_rank_corr": rank_corr}


def reports_to_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value", "n"])
    for r in reports:
        w.writerow([r.metric, repr(float(r.value)), r.n])
    return buf.getvalue()
