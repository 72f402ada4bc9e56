"""
A synthetic world and pairwise fusion
=====================================

Build a small world on the 12 x 5 viewing grid, look at one object from a few
views, and compare the single-view guesses with the fused pair posterior.
"""

import numpy as np

from pairview import GridSpec, ViewIndex
from pairview.fusion import classify_sequence, learn_weights
from pairview.sensorium import (
    Observation,
    ambiguity_profile,
    gen_world,
    sample_objects,
    score_table_from_world,
    single_posterior,
)

grid = GridSpec()
rng = np.random.default_rng(0)

# ambiguity varies smoothly over the sphere: some views look alike for every class
amb = ambiguity_profile(grid, rng, 0.0, 0.85)
world = gen_world(0, 10, grid, feature_dim=8, noise_sigma=0.55, ambiguity=amb, instance_sigma=0.45)
print(f"most ambiguous view {grid.view(int(amb.argmax()))}, clearest {grid.view(int(amb.argmin()))}")

# one test object of class 3, observed at every view
feats = sample_objects(world, [3], rng)[0]
views = [ViewIndex(0, 1), ViewIndex(1, 2), ViewIndex(4, 2), ViewIndex(9, 3)]
obs = [Observation(feats[grid.index(v)], v) for v in views]
for o in obs:
    p = single_posterior(world, o)
    print(f"view {tuple(o.view)}: guess {p.argmax()} (p={p.max():.2f}), p(true)={p[3]:.2f}")

# pose weights come from the mean cross entropy of training pairs at each relative pose
cls = np.repeat(np.arange(10), 20)
train = score_table_from_world(world, cls, sample_objects(world, cls, rng), "train")
weights = learn_weights(train, rng)
# a view never pairs with itself, so the zero pose is left out of the listing
order = [i for i in np.argsort(-weights.lam) if weights.poses[i] != (0, 0)]
print("most trusted relative poses:", [tuple(weights.poses[i]) for i in order[:4]])
print("least trusted relative poses:", [tuple(weights.poses[i]) for i in order[-4:]])

for mode in ("all", "best"):
    label, dist = classify_sequence(world, obs, weights, mode)
    print(f"{mode}-pairs weighted fusion: {label} (p={dist[label]:.2f})")
label, dist = classify_sequence(world, obs, None)
print(f"all-pairs unweighted fusion: {label} (p={dist[label]:.2f})")
