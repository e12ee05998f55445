"""Valence-weighted momentum contrastive pre-training at desk scale."""

from . import _alloc

_alloc.tune()

from .affect_data import (
    AnnotatedSentence,
    Lexicon,
    TokenizedSentence,
    Vocabulary,
    build_vocabulary,
    load_corpus,
    load_lexicon,
    tokenize,
)
from .autodiff import Tensor, no_grad
from .encoder import EncoderConfig, clone_params, encode, init_params
from .gradcheck import grad_check
from .losses import (
    ContrastiveBatch,
    LossBreakdown,
    loss_combined,
    loss_mlm,
    loss_selfsup_cl,
    loss_soft_cl,
    loss_supervised_cl,
    sentiment_similarity,
)
from .metrics import collapse_diagnostics, kendall_tau, mae, pearson_r, spearman_rho, valence_probe
from .momentum import MomentumQueue, MomentumState, loss_momentum_cl, momentum_update
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train_step

__version__ = "0.1.0"
