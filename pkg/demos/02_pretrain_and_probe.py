"""Pre-train a tiny encoder on a synthetic corpus and probe its sentence vectors.

The corpus comes from the bundled generator, so nothing needs downloading.
A ridge probe with grouped cross-validation reads valence back out of the
frozen CLS vectors before and after training.  The sentence loss climbs
over the first steps because the queue fills and every anchor gains
candidates, which raises the loss floor.
"""

from softmcl import experiments, synth, trainer
from softmcl.affect_data import AnnotatedSentence, Lexicon

lex_rows, rows = synth.generate(400, 80, seed=0)
lexicon = Lexicon(dict(lex_rows), "synthetic")
sentences = [AnnotatedSentence(r["text"], r["valence"]) for r in rows]

config = trainer.TrainConfig(total_steps=600, lr=1e-3, hidden_dim=32, ffn_dim=64)
data = trainer.PretrainData.build(sentences, sentences, lexicon, config)
state = trainer.init_state(config, len(data.vocab))


def report(label):
    emb, vals = experiments.sentence_embeddings(state.params, sentences, data.vocab)
    scores = {r.metric: r.value for r in experiments.evaluate(emb, vals)}
    print(f"{label:>8}: probe r={scores['pearson_r']:.3f} mae={scores['mae']:.3f} "
          f"rank corr={scores['valence_rank_corr']:.3f} uniformity={scores['uniformity']:.3f}")


report("init")
state, records = trainer.run(state, data, config)
for r in records[::100] + records[-1:]:
    print(f"step {r.step:4d}  mlm {r.mlm:.3f}  word {r.word_mcl:9.2f}  sent {r.sent_mcl:8.2f}  lr {r.lr:.2e}")
report("trained")
