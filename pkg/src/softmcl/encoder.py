"""Minimal pre-norm transformer encoder.

Token ids go in; per-token hidden vectors and the sentence vector at the
CLS position (index 0) come out.  Parameters are plain float64 tensors in a
name-keyed collection so they can be cloned, momentum-averaged and
checkpointed without any module machinery.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EncoderInputError, ShapeError, VocabularyError


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 128
    max_len: int = 128
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the reserved ids plus at least one token")
        if self.hidden_dim % self.n_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}")
        if self.max_len < 2:
            raise ValueError("max_len must be at least 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def head_dim(self):
        return self.hidden_dim // self.n_heads

    def to_array(self):
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, arr):
        v, h, nl, nh, f, ml, dr, seed = arr.tolist()
        return cls(int(v), int(h), int(nl), int(nh), int(f), int(ml), float(dr), int(seed))


def _shapes(config):
    d, f = config.hidden_dim, config.ffn_dim
    shapes = {
        "tok_emb": (config.vocab_size, d),
        "pos_emb": (config.max_len, d),
        "final_ln.g": (d,),
        "final_ln.b": (d,),
        "mlm_bias": (config.vocab_size,),
    }
    for layer in range(config.n_layers):
        p = f"layer{layer}."
        shapes.update(
            {
                p + "ln1.g": (d,),
                p + "ln1.b": (d,),
                p + "attn.wq": (d, d),
                p + "attn.bq": (d,),
                p + "attn.wk": (d, d),
                p + "attn.bk": (d,),
                p + "attn.wv": (d, d),
                p + "attn.bv": (d,),
                p + "attn.wo": (d, d),
                p + "attn.bo": (d,),
                p + "ln2.g": (d,),
                p + "ln2.b": (d,),
                p + "ffn.w1": (d, f),
                p + "ffn.b1": (f,),
                p + "ffn.w2": (f, d),
                p + "ffn.b2": (d,),
            }
        )
    return shapes


def parameter_count(config):
    return sum(int(np.prod(s)) for s in _shapes(config).values())


class EncoderParams:
    """Name -> Tensor collection, iterated in sorted name order."""

    def __init__(self, config, tensors):
        expected = _shapes(config)
        if set(tensors) != set(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise ShapeError(f"parameter names do not match config (missing {missing}, unexpected {extra})")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
        self.config = config
        self.tensors = {name: tensors[name] for name in sorted(tensors)}

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def num_parameters(self):
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def to_arrays(self):
        return {name: t.data.copy() for name, t in self.tensors.items()}

    @classmethod
    def from_arrays(cls, config, arrays, requires_grad=True):
        return cls(config, {k: Tensor(v, requires_grad=requires_grad) for k, v in arrays.items()})


def init_params(config):
    """Seeded N(0, 0.02) weights; layer-norm gains 1 and all biases 0."""
    rng = np.random.default_rng(config.seed)
    tensors = {}
    for name, shape in _shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            data = np.ones(shape)
        elif leaf.startswith("b") or name == "mlm_bias":
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, 0.02, size=shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return EncoderParams(config, tensors)


def clone_params(params, requires_grad=True):
    return EncoderParams(
        params.config, {k: Tensor(t.data.copy(), requires_grad=requires_grad) for k, t in params.items()}
    )


@dataclass
class EncodedBatch:
    hidden: Tensor
    cls: Tensor
    attention_mask: np.ndarray


def _attention(params, prefix, x, key_mask, config, rng, train_mode):
    b, s, d = x.shape
    h, hd = config.n_heads, config.head_dim

    w = ad.concat([params[prefix + "wq"], params[prefix + "wk"], params[prefix + "wv"]], axis=1)
    bias = ad.concat([params[prefix + "bq"], params[prefix + "bk"], params[prefix + "bv"]], axis=0)
    qkv = ad.transpose(ad.reshape(x @ w + bias, (b, s, 3, h, hd)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = (q @ ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(hd))
    att = ad.softmax(scores, axis=-1, mask=key_mask[:, None, None, :])
    if train_mode:
        att = ad.dropout(att, config.dropout, rng)
    ctx = ad.reshape(ad.transpose(att @ v, (0, 2, 1, 3)), (b, s, d))
    return ctx @ params[prefix + "wo"] + params[prefix + "bo"]


def encode(params, batch, mask=None, train_mode=False, rng=None):
    """Run the encoder over a padded ``[batch, seq]`` id matrix.

    ``mask`` marks real (True) versus padding (False) positions; padding keys
    are excluded from attention so they never influence real positions.
    """
    config = params.config
    ids = np.asarray(batch, dtype=np.int64)
    if ids.ndim != 2:
        raise ShapeError(f"token ids must be [batch, seq], got shape {ids.shape}")
    mask = np.ones(ids.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != ids.shape:
        raise ShapeError(f"mask shape {mask.shape} != ids shape {ids.shape}")
    if ids.shape[1] > config.max_len:
        raise EncoderInputError(f"sequence length {ids.shape[1]} exceeds max_len {config.max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise VocabularyError(f"token id out of range [0, {config.vocab_size})")
    if not mask[:, 0].all():
        raise EncoderInputError("position 0 (CLS) must be valid in every row")
    if train_mode and config.dropout > 0 and rng is None:
        rng = np.random.default_rng(config.seed)

    s = ids.shape[1]
    x = ad.gather_rows(params["tok_emb"], ids) + params["pos_emb"][:s]
    if train_mode:
        x = ad.dropout(x, config.dropout, rng)
    for layer in range(config.n_layers):
        p = f"layer{layer}."
        h = ad.layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        a = _attention(params, p + "attn.", h, mask, config, rng, train_mode)
        if train_mode:
            a = ad.dropout(a, config.dropout, rng)
        x = x + a
        h = ad.layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        f = ad.gelu(h @ params[p + "ffn.w1"] + params[p + "ffn.b1"]) @ params[p + "ffn.w2"] + params[p + "ffn.b2"]
        if train_mode:
            f = ad.dropout(f, config.dropout, rng)
        x = x + f
    hidden = ad.layer_norm(x, params["final_ln.g"], params["final_ln.b"])
    return EncodedBatch(hidden=hidden, cls=hidden[:, 0, :], attention_mask=mask)


def mlm_logits(params, rows):
    """Vocabulary logits for ``[n, hidden]`` rows via the tied embedding."""
    return rows @ ad.transpose(params["tok_emb"]) + params["mlm_bias"]
