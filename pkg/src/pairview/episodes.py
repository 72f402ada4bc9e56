"""Recognition episodes: pick views by a strategy and classify each prefix.

Every strategy runs on batches of episodes in lockstep, one observed view
per step. :func:`run_episode` is the single-episode view of the same engine.
No strategy observes a view twice. When a strategy's proposal is already
visited it falls back as follows, and the step is flagged:

* random, straight: a uniformly random unvisited neighbour, or if there is
  none, a uniformly random unvisited view anywhere;
* nbv-global, nbv-adjacent: the highest-ranked unvisited candidate, and for
  adjacent mode with no unvisited neighbour, the highest-ranked unvisited
  view anywhere;
* optimised: the unvisited view with the highest score anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import ContractViolation
from .fusion import WeightTable, classify_logliks
from .policy import DEFAULT_PLANNER_CAP, NbvPolicy, QualityPredictor, plan_next_views
from .viewsphere import UNIT_DIRECTIONS, GridSpec, ViewIndex, neighbor_table

STRATEGIES = ("random", "straight", "nbv-global", "nbv-adjacent", "optimised")


@dataclass(frozen=True)
class Planners:
    """Fitted lookups needed by the active strategies."""

    nbv: NbvPolicy | None = None
    quality: QualityPredictor | None = None
    horizon_cap: int = DEFAULT_PLANNER_CAP


class EpisodeDraws(NamedTuple):
    """Per-episode randomness: a straight-line direction and one uniform per step."""

    direction: np.ndarray  # (E,) index into UNIT_DIRECTIONS
    uniforms: np.ndarray  # (E, M)


def episode_draws(rng: np.random.Generator, length: int) -> tuple[int, np.ndarray]:
    """All random numbers one episode may consume, drawn in a fixed order."""
    direction = int(rng.integers(len(UNIT_DIRECTIONS)))
    return direction, rng.random(length)


class EpisodeBatch(NamedTuple):
    paths: np.ndarray  # (E, M) flat view indices
    fallback: np.ndarray  # (E, M) bool, True where the strategy's own choice was unusable
    g_trace: np.ndarray | None  # (E, M, V) score table after each observation


@lru_cache(maxsize=None)
def _adjacency(grid: GridSpec) -> np.ndarray:
    nbr = neighbor_table(grid)
    adj = np.zeros((grid.n_views, grid.n_views), dtype=bool)
    rows, cols = np.nonzero(nbr >= 0)
    adj[rows, nbr[rows, cols]] = True
    return adj


def _uniform_pick(mask: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Column of the k-th True entry per row with k = floor(u * count)."""
    count = mask.sum(axis=1)
    k = np.minimum((u * count).astype(np.intp), np.maximum(count - 1, 0))
    csum = np.cumsum(mask, axis=1)
    return np.argmax(mask & (csum == (k + 1)[:, None]), axis=1)


def _random_unvisited(grid, current, visited, u):
    """Uniform unvisited neighbour, else uniform unvisited view anywhere.

    Returns the choice and whether the row had to look beyond its neighbours.
    """
    n = len(current)
    nbr = neighbor_table(grid)[current]
    valid = nbr >= 0
    valid[valid] = ~visited[np.nonzero(valid)[0], nbr[valid]]
    choice = nbr[np.arange(n), _uniform_pick(valid, u)]
    stuck = ~valid.any(axis=1)
    if stuck.any():
        choice[stuck] = _uniform_pick(~visited[stuck], u[stuck])
    return choice, stuck


def run_episodes(
    grid: GridSpec,
    cells: np.ndarray,
    objects: np.ndarray,
    starts: np.ndarray,
    strategy: str,
    length: int,
    draws: EpisodeDraws,
    planners: Planners = Planners(),
    trace: bool = False,
) -> EpisodeBatch:
    """Run a batch of episodes and return the observed view sequences.

    ``cells`` is (n_objects, V): the class cell each object's observation at
    each view dispatches to. ``objects`` and ``starts`` give one object row
    and one flat start view per episode.
    """
    if strategy not in STRATEGIES:
        raise ContractViolation(f"unknown strategy {strategy!r}")
    if not 1 <= length <= grid.n_views:
        raise ContractViolation(f"episode length must be in 1..{grid.n_views}")
    if strategy.startswith("nbv") and planners.nbv is None:
        raise ContractViolation(f"{strategy} needs an NBV policy")
    if strategy == "optimised" and planners.quality is None:
        raise ContractViolation("optimised needs a quality predictor")
    objects = np.asarray(objects, dtype=np.intp)
    n = len(objects)
    rows = np.arange(n)
    paths = np.empty((n, length), dtype=np.intp)
    paths[:, 0] = starts
    fallback = np.zeros((n, length), dtype=bool)
    visited = np.zeros((n, grid.n_views), dtype=bool)
    visited[rows, paths[:, 0]] = True
    g = np.zeros((n, grid.n_views))
    g_trace = np.empty((n, length, grid.n_views)) if trace else None
    dirs = np.array(UNIT_DIRECTIONS, dtype=np.intp)[draws.direction] if strategy == "straight" else None
    big_e = grid.elevation_steps

    for s in range(length):
        cur = paths[:, s]
        cell = cells[objects, cur]
        if strategy == "optimised":
            g = g + np.exp(-planners.quality.h_hat[cell, cur])
        if trace:
            g_trace[:, s] = g
        if s == length - 1:
            break
        u = draws.uniforms[:, s]
        if strategy == "random":
            nxt, stuck = _random_unvisited(grid, cur, visited, u)
            fallback[:, s + 1] = stuck
        elif strategy == "straight":
            az, el = np.divmod(cur, big_e)
            de = dirs[:, 1].copy()
            out = (el + de < 0) | (el + de >= big_e)
            de[out] = -de[out]
            out = (el + de < 0) | (el + de >= big_e)
            de[out] = 0
            dirs[:, 1] = de
            prop = ((az + dirs[:, 0]) % grid.azimuth_steps) * big_e + el + de
            bad = visited[rows, prop]
            nxt = prop
            if bad.any():
                nxt = prop.copy()
                nxt[bad] = _random_unvisited(grid, cur[bad], visited[bad], u[bad])[0]
                fallback[bad, s + 1] = True
        elif strategy in ("nbv-global", "nbv-adjacent"):
            order = planners.nbv.order[cell, cur]  # (n, V-1)
            free = ~visited[rows[:, None], order]
            if strategy == "nbv-adjacent":
                cand = free & _adjacency(grid)[cur[:, None], order]
                first_nb = np.argmax(_adjacency(grid)[cur[:, None], order], axis=1)
                has = cand.any(axis=1)
                col = np.where(has, np.argmax(cand, axis=1), np.argmax(free, axis=1))
                fallback[:, s + 1] = col != first_nb
            else:
                col = np.argmax(free, axis=1)
                fallback[:, s + 1] = col != 0
            nxt = order[rows, col]
        else:
            nxt, stuck = plan_next_views(grid, g, visited, cur, length - s - 1, planners.horizon_cap)
            fallback[:, s + 1] = stuck
        paths[:, s + 1] = nxt
        visited[rows, nxt] = True
    return EpisodeBatch(paths, fallback, g_trace)


@dataclass(frozen=True)
class EpisodeResult:
    path: tuple[ViewIndex, ...]
    predictions: tuple[int, ...]  # label after 1..M views
    distribution: np.ndarray  # fused distribution after all M views
    fallback: tuple[bool, ...]

    @property
    def prediction(self) -> int:
        return self.predictions[-1]


def run_episode(
    grid: GridSpec,
    logliks: np.ndarray,
    cells: np.ndarray,
    start: ViewIndex,
    strategy: str,
    length: int,
    rng: np.random.Generator,
    planners: Planners = Planners(),
    weights: WeightTable | None = None,
) -> EpisodeResult:
    """One recognition episode for a single object.

    ``logliks`` (V, K) and ``cells`` (V,) describe the object at every view.
    The prediction after each prefix uses all-pairs fusion.
    """
    direction, uniforms = episode_draws(rng, length)
    batch = run_episodes(grid, cells[None], np.zeros(1, dtype=np.intp), np.array([grid.index(start)]),
                         strategy, length, EpisodeDraws(np.array([direction]), uniforms[None]), planners)
    flat = batch.paths[0]
    views = [grid.view(int(i)) for i in flat]
    preds = []
    dist = None
    for m in range(1, length + 1):
        label, dist = classify_logliks(grid, views[:m], logliks[flat[:m]], weights)
        preds.append(label)
    return EpisodeResult(tuple(views), tuple(preds), dist, tuple(bool(b) for b in batch.fallback[0]))
