import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softmcl import trainer
from softmcl.affect_data import MASK_ID, AnnotatedSentence, Lexicon, Vocabulary, RESERVED, pad_batch, tokenize
from softmcl.encoder import encode
from softmcl.errors import CheckpointFormatError, ConfigError
from softmcl.losses import combine
from softmcl.trainer import TrainConfig, apply_masking, lr_at, sample_affective_tokens

SMALL = TrainConfig(
    total_steps=30,
    batch_size=8,
    lr=1e-3,
    hidden_dim=8,
    n_heads=2,
    ffn_dim=16,
    n_layers=1,
    queue_capacity=16,
    word_cl_sample=32,
    max_len=16,
)


@pytest.fixture(scope="module")
def data(small_synth):
    lexicon, sentences = small_synth
    return trainer.PretrainData.build(sentences, sentences, lexicon, SMALL)


def fresh(config, data):
    return trainer.init_state(config, len(data.vocab))


# -- config -----------------------------------------------------------------------


def test_defaults():
    c = TrainConfig()
    assert (c.batch_size, c.lr, c.total_steps, c.tau, c.mu, c.queue_capacity) == (64, 2e-5, 20000, 0.1, 0.9, 1024)
    assert (c.lambda1, c.lambda2, c.mask_rate, c.affective_mask_rate, c.word_cl_sample) == (0.25, 0.25, 0.15, 0.30, 256)
    assert c.warmup_steps == 2000


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        TrainConfig().with_overrides({"learning_rate": "1"})


def test_bad_rate_rejected():
    with pytest.raises(ConfigError):
        TrainConfig(mask_rate=1.5)


def test_config_text_round_trip():
    c = SMALL.replace(mode="hard", word_queue=True, tau=0.05)
    assert trainer.load_config(None, trainer.parse_config_text(c.to_text())) == c


# -- schedule ---------------------------------------------------------------------


def test_lr_peaks_at_warmup_end():
    c = TrainConfig(total_steps=100, lr=1.0, warmup_fraction=0.1)
    lrs = [lr_at(s, c) for s in range(1, 101)]
    assert max(lrs) == lrs[9] == 1.0
    assert lrs[-1] == 0.0
    assert all(v >= 0 for v in lrs)
    assert np.allclose(np.diff(lrs[:10]), 0.1) and np.allclose(np.diff(lrs[10:]), -1 / 90)


# -- masking ----------------------------------------------------------------------

VOCAB = Vocabulary(RESERVED + ("good", "bad", "the", "day"))
LEX = Lexicon({"good": 7.89, "bad": 3.24})


def _masking_inputs(texts):
    toks = [tokenize(AnnotatedSentence(t), VOCAB, LEX, 16) for t in texts]
    return pad_batch(toks)


def test_affective_only_masking():
    ids, valid, vals = _masking_inputs(["the good day was bad"])
    c = SMALL.replace(mask_rate=0.0, affective_mask_rate=1.0)
    out = apply_masking(ids, vals, valid, c, np.random.default_rng(0), len(VOCAB))
    assert sorted(out.positions[:, 1].tolist()) == [2, 5]
    assert sorted(out.targets.tolist()) == sorted([VOCAB.id_of("bad"), VOCAB.id_of("good")])


def test_no_masking():
    ids, valid, vals = _masking_inputs(["the good day"])
    out = apply_masking(ids, vals, valid, SMALL.replace(mask_rate=0.0, affective_mask_rate=0.0), np.random.default_rng(0), 8)
    assert len(out.targets) == 0
    assert np.array_equal(out.ids, ids)


def test_masking_deterministic_and_skips_cls_and_padding():
    ids, valid, vals = _masking_inputs(["the good day", "bad"] * 20)
    c = SMALL.replace(mask_rate=0.5)
    a = apply_masking(ids, vals, valid, c, np.random.default_rng(3), 8)
    b = apply_masking(ids, vals, valid, c, np.random.default_rng(3), 8)
    assert np.array_equal(a.ids, b.ids) and np.array_equal(a.positions, b.positions)
    assert np.all(a.positions[:, 1] > 0)
    assert valid[a.positions[:, 0], a.positions[:, 1]].all()


def test_replacement_split_is_roughly_80_10_10():
    ids = np.full((200, 50), 5)
    ids[:, 0] = 0
    valid = np.ones_like(ids, dtype=bool)
    out = apply_masking(ids, np.zeros(ids.shape), valid, SMALL.replace(mask_rate=1.0), np.random.default_rng(0), 1000)
    picked = out.ids[:, 1:]
    frac_mask = np.mean(picked == MASK_ID)
    frac_kept = np.mean(picked == 5)
    assert abs(frac_mask - 0.8) < 0.01
    assert 0.09 < frac_kept < 0.11


# -- affective token sampling -----------------------------------------------------


def _encoded(n_rows, width, rated_per_row, data):
    from softmcl.encoder import EncoderConfig, init_params

    params = init_params(EncoderConfig(vocab_size=10, hidden_dim=4, n_layers=1, n_heads=2, ffn_dim=4, max_len=width))
    ids = np.full((n_rows, width), 4)
    ids[:, 0] = 0
    vals = np.zeros((n_rows, width))
    vals[:, 1 : 1 + rated_per_row] = 6.0
    return encode(params, ids), vals


def test_sample_exactly_k_distinct():
    enc, vals = _encoded(10, 32, 30, None)
    batch, pos = sample_affective_tokens(enc, vals, 256, np.random.default_rng(0))
    assert len(batch) == 256 and len(set(pos.tolist())) == 256


def test_sample_takes_all_when_short():
    enc, vals = _encoded(2, 8, 3, None)
    batch, pos = sample_affective_tokens(enc, vals, 256, np.random.default_rng(0))
    assert len(pos) == 6


@pytest.mark.parametrize("rated", [0, 1])
def test_sample_skips_when_fewer_than_two(rated):
    enc, vals = _encoded(1, 4, rated, None)
    batch, pos = sample_affective_tokens(enc, vals, 256, np.random.default_rng(0))
    assert batch is None and len(pos) == rated


# -- training -----------------------------------------------------------------------


def test_logged_total_is_exact_composition(data):
    state, records = trainer.run(fresh(SMALL, data), data, SMALL, until=5)
    for r in records:
        assert r.total == combine(r.mlm, r.word_mcl, r.sent_mcl, SMALL.lambda1, SMALL.lambda2)
        assert all(np.isfinite([r.mlm, r.word_mcl, r.sent_mcl]))
        assert min(r.mlm, r.word_mcl, r.sent_mcl) >= 0
    assert [r.step for r in records] == [1, 2, 3, 4, 5]
    assert records[-1].queue_len == min(16, 5 * 8)


def test_zero_lambdas_match_mlm_only(data):
    a_cfg = SMALL.replace(lambda1=0.0, lambda2=0.0)
    b_cfg = SMALL.replace(mode="mlm")
    a, _ = trainer.run(fresh(a_cfg, data), data, a_cfg, until=4)
    b, _ = trainer.run(fresh(b_cfg, data), data, b_cfg, until=4)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)


def test_zero_lr_freezes_params_but_momentum_drifts(data):
    cfg = SMALL.replace(lr=0.0, weight_decay=0.0)
    state = fresh(cfg, data)
    before = state.params.to_arrays()
    state.momentum.params_m["tok_emb"].data[...] = 0.0
    state, _ = trainer.run(state, data, cfg, until=3)
    for k, v in before.items():
        np.testing.assert_array_equal(state.params[k].data, v)
    np.testing.assert_allclose(state.momentum.params_m["tok_emb"].data, (1 - 0.9**3) * before["tok_emb"], atol=1e-15)


def test_sentence_loss_reacts_to_sentence_path(data):
    cfg = SMALL
    state = fresh(cfg, data)
    wb, sb = trainer.draw_batches(data, cfg, 1)
    _, r1 = trainer.train_step(fresh(cfg, data), wb, sb, cfg, len(data.vocab))
    state.params["layer0.attn.wv"].data += np.random.default_rng(0).normal(scale=0.5, size=(8, 8))
    _, r2 = trainer.train_step(state, wb, sb, cfg, len(data.vocab))
    assert r1.sent_mcl != r2.sent_mcl


def test_queue_and_key_encoder_stay_detached(data):
    state, _ = trainer.run(fresh(SMALL, data), data, SMALL, until=3)
    assert isinstance(state.queue.reps, np.ndarray)
    assert all(t.grad is None and not t.requires_grad for t in state.momentum.params_m.values())
    # stored keys are unit vectors from the key encoder
    np.testing.assert_allclose(np.linalg.norm(state.queue.reps, axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("mode", ["soft", "hard", "selfsup", "mlm"])
def test_every_mode_trains(small_synth, mode):
    lexicon, sentences = small_synth
    cfg = SMALL.replace(mode=mode)
    d = trainer.PretrainData.build(sentences, sentences, lexicon, cfg)
    _, records = trainer.run(fresh(cfg, d), d, cfg, until=3)
    assert len(records) == 3
    if mode in ("selfsup", "mlm"):
        assert all(r.word_mcl == 0 for r in records)
    if mode == "mlm":
        assert all(r.sent_mcl == 0 for r in records)


def test_two_hundred_steps_lower_total(small_synth):
    lexicon, sentences = small_synth
    cfg = SMALL.replace(total_steps=200, queue_capacity=64)
    d = trainer.PretrainData.build(sentences, sentences, lexicon, cfg)
    _, records = trainer.run(fresh(cfg, d), d, cfg)
    assert records[-1].total < records[0].total


# -- determinism and checkpoints -------------------------------------------------------


def test_same_seed_same_log(data):
    a = trainer.log_csv(trainer.run(fresh(SMALL, data), data, SMALL, until=6)[1])
    b = trainer.log_csv(trainer.run(fresh(SMALL, data), data, SMALL, until=6)[1])
    assert a == b
    c = SMALL.replace(seed=1)
    assert trainer.log_csv(trainer.run(fresh(c, data), data, c, until=6)[1]) != a


def test_checkpoint_round_trip_bitwise(data, tmp_path):
    state, _ = trainer.run(fresh(SMALL, data), data, SMALL, until=4)
    path = tmp_path / "c.smcl"
    trainer.save_checkpoint(state, path, data.vocab.digest())
    loaded, digest = trainer.load_checkpoint(path)
    assert digest == data.vocab.digest()
    assert loaded.step == 4
    a, b = trainer.state_arrays(state), trainer.state_arrays(loaded)
    assert sorted(a) == sorted(b)
    for k in a:
        assert np.asarray(a[k]).tobytes() == np.asarray(b[k]).tobytes(), k


def test_resume_matches_uninterrupted(data, tmp_path):
    cfg = SMALL.replace(total_steps=12)
    _, full = trainer.run(fresh(cfg, data), data, cfg)
    half, first = trainer.run(fresh(cfg, data), data, cfg, until=6)
    trainer.save_checkpoint(half, tmp_path / "c.smcl")
    resumed, _ = trainer.load_checkpoint(tmp_path / "c.smcl")
    _, second = trainer.run(resumed, data, cfg)
    assert trainer.log_csv(first + second) == trainer.log_csv(full)


def test_truncated_checkpoint_rejected(data, tmp_path):
    state = fresh(SMALL, data)
    path = tmp_path / "c.smcl"
    trainer.save_checkpoint(state, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointFormatError):
        trainer.load_checkpoint(path)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 400), st.floats(0.0, 0.5))
def test_lr_schedule_is_piecewise_linear(total, frac):
    c = TrainConfig(total_steps=total, warmup_fraction=frac, lr=0.5)
    lrs = np.array([lr_at(s, c) for s in range(1, total + 1)])
    assert np.all(lrs >= 0) and np.all(lrs <= 0.5 + 1e-15)
    if c.warmup_steps:
        assert lrs[c.warmup_steps - 1] == 0.5
