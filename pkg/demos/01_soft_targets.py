"""How valence similarity shapes the contrastive targets.

Four sentences, two pairs of near-identical representations.  Hard labels
split the batch at the midpoint of the scale; soft targets spread weight
over every other sentence in proportion to how close the valences are.
"""

import numpy as np

from softmcl.autodiff import Tensor
from softmcl.losses import (
    ContrastiveBatch,
    loss_soft_cl,
    loss_supervised_cl,
    polarity_labels,
    sentiment_similarity,
    soft_targets,
)

valences = np.array([8.5, 7.0, 5.5, 2.0])
reps = np.array([[1.0, 0.1], [0.9, 0.2], [0.1, 1.0], [-1.0, 0.1]])

print("similarity of 4.14 and 3.24:", sentiment_similarity(4.14, 3.24))

valid = ~np.eye(4, dtype=bool)
print("soft target weights (rows sum to 1, self excluded):")
print(np.round(soft_targets(valences, valences, valid), 3))
print("polarity labels:", polarity_labels(valences))

batch = ContrastiveBatch(Tensor(reps), valences)
for tau in (0.05, 0.1, 0.5):
    soft = float(loss_soft_cl(batch, tau).data)
    hard = float(loss_supervised_cl(batch, polarity_labels(valences), tau).data)
    print(f"tau={tau:<5} soft={soft:8.4f} hard={hard:8.4f}")
