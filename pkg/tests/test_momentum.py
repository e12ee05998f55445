import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from softmcl.autodiff import Tensor
from softmcl.encoder import EncoderConfig, init_params
from softmcl.errors import DegenerateBatchError, ParameterError, ShapeError
from softmcl.gradcheck import grad_check
from softmcl.losses import ContrastiveBatch, loss_soft_cl
from softmcl.momentum import (
    MomentumQueue,
    MomentumState,
    enqueue,
    loss_momentum_cl,
    loss_momentum_supervised_cl,
    momentum_update,
)

CFG = EncoderConfig(vocab_size=12, hidden_dim=8, n_layers=1, n_heads=2, ffn_dim=16, max_len=6)


def _pair(seed_online=1, seed_m=2):
    online = init_params(EncoderConfig(**{**CFG.__dict__, "seed": seed_online}))
    other = init_params(EncoderConfig(**{**CFG.__dict__, "seed": seed_m}))
    return online, MomentumState.from_encoder(other)


def test_mu_one_freezes():
    online, state = _pair()
    before = {k: t.data.copy() for k, t in state.params_m.items()}
    state.mu = 1.0
    momentum_update(state, online)
    for k, t in state.params_m.items():
        assert np.array_equal(t.data, before[k])


def test_mu_zero_copies_and_leaves_online_alone():
    online, state = _pair()
    snapshot = online.to_arrays()
    state.mu = 0.0
    momentum_update(state, online)
    for k, t in state.params_m.items():
        assert np.array_equal(t.data, online[k].data)
        assert np.array_equal(online[k].data, snapshot[k])


def test_geometric_recursion():
    online, state = _pair()
    for t in online.values():
        t.data[...] = 1.0
    for t in state.params_m.values():
        t.data[...] = 0.0
    state.mu = 0.9
    for k in range(1, 31):
        momentum_update(state, online)
        expected = 1.0 - 0.9**k
        for t in state.params_m.values():
            np.testing.assert_allclose(t.data, expected, rtol=0, atol=1e-14)


def test_first_update_gives_point_one():
    online, state = _pair()
    online["mlm_bias"].data[...] = 1.0
    state.params_m["mlm_bias"].data[...] = 0.0
    momentum_update(state, online)
    np.testing.assert_allclose(state.params_m["mlm_bias"].data, 0.1, rtol=0, atol=1e-15)


def test_momentum_rejects_bad_mu():
    online, _ = _pair()
    with pytest.raises(ParameterError):
        MomentumState.from_encoder(online, mu=1.5)


def test_momentum_shape_mismatch():
    online, state = _pair()
    bigger = init_params(EncoderConfig(**{**CFG.__dict__, "hidden_dim": 12, "n_heads": 2}))
    with pytest.raises(ShapeError):
        momentum_update(state, bigger)


def test_from_encoder_is_detached_copy():
    online, _ = _pair()
    state = MomentumState.from_encoder(online)
    state.params_m["tok_emb"].data[0, 0] += 1.0
    assert online["tok_emb"].data[0, 0] != state.params_m["tok_emb"].data[0, 0]
    assert not any(t.requires_grad for t in state.params_m.values())


# -- queue ------------------------------------------------------------------------


def test_fifo_eviction():
    q = MomentumQueue(3, 1)
    for v in [1.0, 2.0, 3.0, 4.0]:
        enqueue(q, np.array([[v]]), [v])
    assert q.reps[:, 0].tolist() == [2.0, 3.0, 4.0]
    assert q.valences.tolist() == [2.0, 3.0, 4.0]


def test_large_batch_keeps_last_rows():
    q = MomentumQueue(3, 2)
    q.enqueue(np.arange(10.0).reshape(5, 2), [1, 2, 3, 4, 5])
    assert q.valences.tolist() == [3, 4, 5]
    assert q.reps.tolist() == [[4, 5], [6, 7], [8, 9]]


def test_sentinel_rows_not_stored():
    q = MomentumQueue(4, 2)
    q.enqueue(np.ones((3, 2)), [5.0, 0.0, 6.0])
    assert q.valences.tolist() == [5.0, 6.0]


def test_zero_capacity_stays_empty():
    q = MomentumQueue(0, 2)
    q.enqueue(np.ones((3, 2)), [5.0, 4.0, 6.0])
    assert len(q) == 0


def test_queue_dimension_mismatch():
    with pytest.raises(ShapeError):
        MomentumQueue(4, 3).enqueue(np.ones((2, 2)), [5.0, 5.0])


def test_queue_stores_copies():
    q = MomentumQueue(4, 2)
    rows = np.ones((1, 2))
    q.enqueue(rows, [5.0])
    rows[0, 0] = 99.0
    assert q.reps[0, 0] == 1.0
    q.reps[0, 0] = 42.0
    assert q.reps[0, 0] == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.lists(st.integers(1, 5), min_size=1, max_size=12))
def test_queue_holds_most_recent_rows(capacity, dim, sizes):
    q = MomentumQueue(capacity, dim)
    history = []
    counter = 0
    for n in sizes:
        rows = np.arange(counter, counter + n, dtype=float)[:, None] * np.ones((1, dim))
        q.enqueue(rows, np.full(n, 5.0))
        history.extend(range(counter, counter + n))
        counter += n
        assert len(q) <= capacity
    assert q.reps[:, 0].tolist() == [float(v) for v in history[-capacity:]]


# -- loss -------------------------------------------------------------------------


def _batch(reps, vals):
    return ContrastiveBatch(Tensor(np.asarray(reps, dtype=float), requires_grad=True), vals)


def test_empty_queue_matches_soft(rng):
    reps, vals = rng.normal(size=(5, 6)), rng.uniform(1, 9, size=5)
    a = float(loss_momentum_cl(_batch(reps, vals), MomentumQueue(8, 6), 0.1).data)
    b = float(loss_soft_cl(_batch(reps, vals), 0.1).data)
    assert abs(a - b) <= 1e-12


def test_single_anchor_identical_queue_entry_is_zero():
    q = MomentumQueue(4, 3)
    q.enqueue(np.array([[0.0, 0.6, 0.8]]), [6.0])
    loss = loss_momentum_cl(_batch([[0.0, 0.6, 0.8]], [6.0]), q, tau=1.0)
    assert float(loss.data) == pytest.approx(0.0, abs=1e-15)


def test_no_candidates_is_degenerate():
    with pytest.raises(DegenerateBatchError):
        loss_momentum_cl(_batch([[1.0, 0.0]], [5.0]), MomentumQueue(4, 2), 0.1)


def test_matches_union_oracle(rng):
    reps, vals = rng.normal(size=(4, 8)), rng.uniform(1, 9, size=4)
    q_reps, q_vals = rng.normal(size=(6, 8)), rng.uniform(1, 9, size=6)
    q = MomentumQueue(6, 8).enqueue(q_reps, q_vals)
    got = float(loss_momentum_cl(_batch(reps, vals), q, 0.1).data)
    want = oracles.momentum(reps, vals.tolist(), q_reps, q_vals.tolist(), 0.1)
    assert got == pytest.approx(want, abs=1e-10)


def test_queue_is_detached(rng):
    b = _batch(rng.normal(size=(3, 5)), rng.uniform(1, 9, size=3))
    q_reps = rng.normal(size=(4, 5))
    q = MomentumQueue(4, 5).enqueue(q_reps, rng.uniform(1, 9, size=4))
    assert grad_check(lambda: loss_momentum_cl(b, q, 0.2), [b.reps], tol=1e-5).passed

    base = float(loss_momentum_cl(b, q, 0.2).data)
    q.restore(q_reps + 0.3, q.valences)
    assert float(loss_momentum_cl(b, q, 0.2).data) != base
    # nothing in the graph reaches the stored rows
    loss_momentum_cl(b, q, 0.2).backward()
    assert b.reps.grad is not None


def test_each_enqueue_adds_one_candidate(rng):
    b = _batch(rng.normal(size=(3, 4)), [2.0, 5.0, 8.0])
    q = MomentumQueue(10, 4)
    from softmcl.momentum import _union

    sizes = []
    for k in range(4):
        q.enqueue(rng.normal(size=(1, 4)), [4.0])
        cands, _, valid = _union(b, q)
        sizes.append(valid.sum(axis=1)[0])
    assert np.diff(sizes).tolist() == [1, 1, 1]


def test_refreshed_queue_equals_soft_on_doubled_set(rng):
    # With the current batch itself in the queue, each anchor also sees its own
    # copy; that matches the self-excluded soft loss on the doubled candidate set.
    reps, vals = rng.normal(size=(4, 6)), rng.uniform(1, 9, size=4)
    q = MomentumQueue(4, 6).enqueue(reps, vals)
    got = float(loss_momentum_cl(_batch(reps, vals), q, 0.3).data)
    want = oracles.momentum(reps, vals.tolist(), reps, vals.tolist(), 0.3)
    assert got == pytest.approx(want, abs=1e-10)


def test_supervised_queue_variant(rng):
    reps, vals = rng.normal(size=(4, 5)), np.array([2.0, 3.0, 7.0, 8.0])
    q = MomentumQueue(4, 5).enqueue(rng.normal(size=(2, 5)), [1.5, 8.5])
    loss = loss_momentum_supervised_cl(_batch(reps, vals), q, 0.1)
    assert float(loss.data) > 0
