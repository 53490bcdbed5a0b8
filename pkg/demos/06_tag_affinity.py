"""Gradient-lookahead task affinities during training.

Records how a trunk step taken for one task changes every other
task's batch loss, plus the domain-wide variant that uses the summed
gradient of the whole complementary set. Sampling happens early in
training, where same-group gradients still point the same way.
"""

import numpy as np

from mtlc.data import SynthConfig, assign_folds, synth_generate, training_subset
from mtlc.learner import ModelConfig
from mtlc.tag import run_tag

ds, _ = synth_generate(
    SynthConfig(n_rows=1500, d=16, K=6, group_structure=((0, 1, 2), (3, 4, 5)),
                within_group_angle=0.2, label_rate=0.2, noise_sd=0.15, seed=13)
)
fa = assign_folds(ds, 5, seed=13)
sel = training_subset(ds, fa, 3)

cfg = ModelConfig(d=16, r=16, K=6, learning_rate=0.01, epochs=8, batch_size=128, seed=13)
res = run_tag(ds, sel, cfg, sample_every=5)

print(f"mean affinity over {res.n_records} sampled steps (source row -> target col):")
with np.printoptions(precision=3, suppress=True):
    print(np.where(np.isnan(res.z_mean), 0.0, res.z_mean * 1e3), "(x 1e-3, diagonal 0)")

groups = [set((0, 1, 2)), set((3, 4, 5))]
within, cross = [], []
for j in range(6):
    for i in range(6):
        if i == j or np.isnan(res.z_mean[j, i]):
            continue
        same = any(i in g and j in g for g in groups)
        (within if same else cross).append(res.z_mean[j, i])
print(f"\nwithin-group mean: {np.mean(within):+.5f}")
print(f"cross-group mean:  {np.mean(cross):+.5f}")
print("\ndomain-wide affinity (everything-but-target as the source):")
print(" ", np.round(res.domain_mean, 4).tolist())
