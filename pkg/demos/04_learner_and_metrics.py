"""The shared-trunk classifier and incomplete-label evaluation.

Trains the rectifier-trunk/logistic-heads model on a masked label
matrix, shows bit-exact replay, and evaluates per-task AUROC/AUPR on
only the labels that exist.
"""

import numpy as np

from mtlc.data import SynthConfig, assign_folds, synth_generate, training_subset
from mtlc.learner import ModelConfig, predict, train
from mtlc.metrics import spearman, task_metrics

ds, _ = synth_generate(
    SynthConfig(n_rows=1500, d=10, K=4, group_structure=((0, 1), (2, 3)),
                within_group_angle=0.3, label_rate=0.4, noise_sd=0.25, seed=5)
)
fa = assign_folds(ds, 5, seed=5)
sel = training_subset(ds, fa, 4)

cfg = ModelConfig(d=10, r=16, K=4, learning_rate=0.01, epochs=40, batch_size=128, seed=5)
model = train(ds, sel, cfg)
replay = train(ds, sel, cfg)
print("bit-exact replay:", all(
    np.array_equal(getattr(model, f), getattr(replay, f)) for f in ("w1", "b1", "w2", "b2")
))

scores = predict(model, ds.features[sel.test_rows])
per_task = task_metrics(scores, ds.labels, ds.mask, rows=sel.test_rows)
print(f"\n{'task':>4} {'auroc':>7} {'aupr':>7} {'pos':>5} {'neg':>5}")
for t, tm in per_task.items():
    print(f"{t:>4} {tm.auroc:7.3f} {tm.aupr:7.3f} {tm.n_pos:>5} {tm.n_neg:>5}")

x = [tm.auroc for tm in per_task.values()]
y = [tm.aupr for tm in per_task.values()]
res = spearman(x, y)
print(f"\nSpearman(AUROC, AUPR) across tasks: r={res.r:+.2f}, p={res.p:.3f} "
      "(exact permutation tail at this n)")
