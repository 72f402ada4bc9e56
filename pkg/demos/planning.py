"""
Choosing where to look next
===========================

Fit the next-best-view lookup and the pair-quality predictor on a world, then
follow one episode with each active strategy.
"""

import numpy as np

from pairview import GridSpec, ViewIndex
from pairview.episodes import Planners, run_episode
from pairview.fusion import learn_weights
from pairview.policy import dispatch_cells, fit_nbv_policy, fit_quality_predictor, new_episode, optimised_next, update_costs_cell
from pairview.sensorium import ambiguity_profile, gen_world, sample_objects, score_table_from_world

grid = GridSpec()
rng = np.random.default_rng(1)
world = gen_world(1, 10, grid, 8, 0.55, ambiguity_profile(grid, rng, 0.0, 0.85), instance_sigma=0.45)

nbv = fit_nbv_policy(world)
quality = fit_quality_predictor(world, rng, samples_per_cell=20)
planners = Planners(nbv, quality, horizon_cap=5)

# where would class 2 seen from (0, 2) best be completed?
print("best companion pose for class 2 at (0, 2):", tuple(nbv.best_pose(2, ViewIndex(0, 2))))

# the g table: predicted quality of pairing each unseen view with what was seen
state = new_episode(grid)
state = update_costs_cell(state, ViewIndex(0, 2), 2, quality)
g = state.g.reshape(grid.azimuth_steps, grid.elevation_steps)
print("g after one view (rows azimuth, columns elevation):")
print(np.array2string(g, precision=2, suppress_small=True))
print("planner picks", tuple(optimised_next(state, remaining_steps=6)))

cls = np.repeat(np.arange(10), 20)
train = score_table_from_world(world, cls, sample_objects(world, cls, rng), "train")
weights = learn_weights(train, rng)

feats = sample_objects(world, [2], rng)[0]
logliks = world.loglik_table(feats[None])[0]
cells = dispatch_cells(world.signatures, feats[None])[0]
for strategy in ("random", "straight", "nbv-global", "nbv-adjacent", "optimised"):
    res = run_episode(grid, logliks, cells, ViewIndex(0, 2), strategy, 6, np.random.default_rng(7), planners, weights)
    path = " ".join(f"{v.azimuth},{v.elevation}" for v in res.path)
    print(f"{strategy:>13}: {path}  -> predictions {res.predictions}")
