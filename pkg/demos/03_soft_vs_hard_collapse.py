"""Soft targets keep the valence ordering; hard labels fold it into two clusters.

Trains the same small encoder with each sentence-level objective and prints
the collapse diagnostics.  Hard labels pull every positive sentence toward
one point, so cosine similarity stops tracking valence distance.  Note the
uniformity column: two opposite clusters spread further than the soft run's
narrow valence-ordered cap, so hard reads as less collapsed on that metric.
Takes about two minutes.
"""

from softmcl import experiments, synth, trainer
from softmcl.affect_data import AnnotatedSentence, Lexicon

lex_rows, rows = synth.generate(400, 80, seed=1)
lexicon = Lexicon(dict(lex_rows), "synthetic")
sentences = [AnnotatedSentence(r["text"], r["valence"]) for r in rows]

config = trainer.TrainConfig(total_steps=600, lr=1e-3, hidden_dim=32, ffn_dim=64)
diagnostics = experiments.compare_modes(config, ("selfsup", "hard", "soft"), sentences, sentences, lexicon)
print(f"{'mode':<8} {'alignment':>10} {'uniformity':>11} {'rank corr':>10}")
for mode, d in diagnostics.items():
    print(f"{mode:<8} {d['alignment'] or float('nan'):10.4f} {d['uniformity']:11.4f} {d['valence_rank_corr']:10.4f}")
