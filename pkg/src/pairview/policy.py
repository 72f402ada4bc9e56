"""Active view selection.

Two learned lookups stand in for the image-to-output networks:

* :class:`NbvPolicy` maps an observation to the relative pose of the
  partner view whose pair best recognises the object, and keeps the full
  ranking of partner views for fallbacks and adjacent-only selection.
* :class:`QualityPredictor` maps an observation to the predicted pair cross
  entropy with every other view.

Both dispatch a raw observation to a (class, view) cell by nearest stored
signature at the observation's (known) view.

Trajectory optimisation keeps a per-view score ``g`` that accumulates the
pair quality ``exp(-h)`` between each unobserved view and every observed
one, then moves to the neighbour whose best bounded-length walk collects
the most score over its distinct unobserved views.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import ContractViolation, EpisodeComplete, HorizonExceeded
from .sensorium import Observation, ScoreTable, SyntheticWorld, sample_objects, softmax
from .viewsphere import (
    GridSpec,
    Path,
    RelativePose,
    ViewIndex,
    neighbor_table,
    relative_pose,
)
from .fusion import PROB_FLOOR

DEFAULT_PLANNER_CAP = 5
TIE_RTOL = 1e-9
NBV_MODES = ("global", "adjacent")


def dispatch_cells(signatures: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Nearest-signature class for observations at every view.

    ``signatures`` is (K, V, D) and ``features`` (..., V, D); returns (..., V)
    with ties going to the lowest class.
    """
    d2 = ((features[..., None, :, :] - signatures) ** 2).sum(-1)  # (..., K, V)
    return np.argmin(d2, axis=-2)


def _dispatch_one(signatures: np.ndarray | None, grid: GridSpec, obs: Observation) -> int:
    if signatures is None:
        raise ContractViolation("this lookup has no signature bank; dispatch needs a class cell")
    mu = signatures[:, grid.index(obs.view)]
    return int(np.argmin(((np.asarray(obs.features) - mu) ** 2).sum(-1)))


@lru_cache(maxsize=None)
def _pose_key(grid: GridSpec) -> np.ndarray:
    """(V, V) integer key ordering targets of each source by (d_azimuth, d_elevation)."""
    views = grid.views()
    span = 2 * grid.elevation_steps + 1
    key = np.array([[relative_pose(grid, a, b).d_azimuth * span + relative_pose(grid, a, b).d_elevation
                     for b in views] for a in views])
    key.setflags(write=False)
    return key


def _rank_targets(grid: GridSpec, scores: np.ndarray) -> np.ndarray:
    """Order partner views of every (class, view) cell, best first.

    Sorted by descending score, ties by ascending (d_azimuth, d_elevation).
    The source view itself is excluded. Returns (K, V, V - 1).
    """
    k, v, _ = scores.shape
    key = _pose_key(grid)
    out = np.empty((k, v, v - 1), dtype=np.intp)
    for c in range(k):
        for s in range(v):
            targets = np.array([t for t in range(v) if t != s])
            o = np.lexsort((key[s, targets], -scores[c, s, targets]))
            out[c, s] = targets[o]
    return out


@dataclass(frozen=True, eq=False)
class NbvPolicy:
    """Best partner pose per (class, view) cell, plus the ranking it came from.

    ``scores[c, v, t]`` is the ground-truth class probability of the pair
    (v, t) for class ``c``; ``order[c, v]`` lists partner views best first.
    """

    grid: GridSpec
    scores: np.ndarray
    order: np.ndarray
    signatures: np.ndarray | None = None

    @property
    def num_classes(self) -> int:
        return self.scores.shape[0]

    def best_pose(self, cls: int, view: ViewIndex) -> RelativePose:
        target = self.grid.view(self.order[cls, self.grid.index(view), 0])
        return relative_pose(self.grid, view, target)

    def dispatch(self, obs: Observation) -> int:
        return _dispatch_one(self.signatures, self.grid, obs)


def _nbv_from_scores(grid: GridSpec, scores: np.ndarray, signatures=None) -> NbvPolicy:
    scores = scores.copy()
    for s in range(grid.n_views):
        scores[:, s, s] = np.nan
    return NbvPolicy(grid, scores, _rank_targets(grid, np.nan_to_num(scores, nan=-np.inf)), signatures)


def _signature_pair_scores(world: SyntheticWorld) -> np.ndarray:
    """p(true class) for the noise-free signature pair of every (class, view, target)."""
    ll = world.loglik_table(world.signatures)  # (K, V, K)
    k = world.num_classes
    pair = ll[:, :, None, :] + ll[:, None, :, :]  # (K, V, V, K)
    probs = softmax(pair)
    return probs[np.arange(k), :, :, np.arange(k)]


def fit_nbv_policy(world: SyntheticWorld) -> NbvPolicy:
    return _nbv_from_scores(world.grid, _signature_pair_scores(world), world.signatures)


def build_nbv_targets(world: SyntheticWorld) -> list[tuple[tuple[int, ViewIndex], RelativePose]]:
    """Best partner pose for every (class, view), as training targets."""
    policy = fit_nbv_policy(world)
    return [((c, v), policy.best_pose(c, v)) for c in range(world.num_classes) for v in world.grid.views()]


def nbv_policy_from_scores(table: ScoreTable) -> NbvPolicy:
    """NBV policy from training objects: average pair probability of the true class."""
    k = table.num_classes
    acc = np.zeros((k, table.grid.n_views, table.grid.n_views))
    counts = np.bincount(table.true_class, minlength=k)
    if np.any(counts == 0):
        raise ContractViolation("every class needs at least one training object")
    for r, c in enumerate(table.true_class):
        ll = table.scores[r]
        acc[c] += softmax(ll[:, None, :] + ll[None, :, :])[..., c]
    return _nbv_from_scores(table.grid, acc / counts[:, None, None])


def nbv_next_cell(policy: NbvPolicy, cls: int, view: ViewIndex, mode: str, visited) -> ViewIndex:
    """Next view for an observation already dispatched to class cell ``cls``."""
    grid = policy.grid
    seen = {grid.index(v) for v in visited}
    src = grid.index(view)
    if src not in seen:
        raise ContractViolation("the current view must be among the visited views")
    if len(seen) >= grid.n_views:
        raise EpisodeComplete("every view has been visited")
    order = policy.order[cls, src]
    if mode == "adjacent":
        nb = set(neighbor_table(grid)[src]) - {-1}
        for t in order:
            if t in nb and t not in seen:
                return grid.view(t)
    elif mode != "global":
        raise ContractViolation(f"unknown NBV mode {mode!r}")
    for t in order:
        if t not in seen:
            return grid.view(t)
    raise EpisodeComplete("every view has been visited")


def nbv_next(policy: NbvPolicy, obs: Observation, mode: str, visited) -> ViewIndex:
    """Next-best view from a single observation.

    Global mode follows the stored best pose. Adjacent mode takes the best
    ranked neighbour of the current view. Whenever the choice was already
    visited, the highest-ranked unvisited candidate is used instead.
    """
    return nbv_next_cell(policy, policy.dispatch(obs), obs.view, mode, visited)


def save_nbv_policy(policy: NbvPolicy, path, ranking_path=None) -> None:
    grid = policy.grid
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "azimuth", "elevation", "best_d_azimuth", "best_d_elevation"])
        for c in range(policy.num_classes):
            for v in grid.views():
                p = policy.best_pose(c, v)
                w.writerow([c, v.azimuth, v.elevation, p.d_azimuth, p.d_elevation])
    if ranking_path is not None:
        with open(ranking_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "azimuth", "elevation", "target_azimuth", "target_elevation", "p_true"])
            for c in range(policy.num_classes):
                for i, v in enumerate(grid.views()):
                    for j, t in enumerate(grid.views()):
                        if i != j:
                            w.writerow([c, v.azimuth, v.elevation, t.azimuth, t.elevation,
                                        repr(float(policy.scores[c, i, j]))])


def load_nbv_policy(path, ranking_path, grid: GridSpec | None = None, signatures=None) -> NbvPolicy:
    """Rebuild a policy from its ranking file and check it against the best-pose file."""
    grid = grid or GridSpec()
    cells = _read_cell_rows(ranking_path, grid, "p_true")
    k = 1 + max(c for c, _, _ in cells)
    scores = np.full((k, grid.n_views, grid.n_views), np.nan)
    for (c, s, t), val in cells.items():
        scores[c, s, t] = val
    off = ~np.eye(grid.n_views, dtype=bool)
    if np.isnan(scores[:, off]).any():
        raise ContractViolation(f"{ranking_path}: ranking is incomplete")
    policy = _nbv_from_scores(grid, scores, signatures)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["class", "azimuth", "elevation", "best_d_azimuth", "best_d_elevation"]:
            raise ContractViolation(f"{path}: bad NBV policy header")
        for line, rec in enumerate(reader, start=2):
            c, az, el, da, de = map(int, rec)
            if policy.best_pose(c, ViewIndex(az, el)) != (da, de):
                raise ContractViolation(f"{path}:{line}: best pose disagrees with the ranking file")
    return policy


def _read_cell_rows(path, grid: GridSpec, value_col: str) -> dict[tuple[int, int, int], float]:
    header = ["class", "azimuth", "elevation", "target_azimuth", "target_elevation", value_col]
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != header:
            raise ContractViolation(f"{path}: expected header {','.join(header)}")
        for line, rec in enumerate(reader, start=2):
            try:
                c, az, el, taz, tel = map(int, rec[:5])
                val = float(rec[5])
                out[(c, grid.index(ViewIndex(az, el)), grid.index(ViewIndex(taz, tel)))] = val
            except (ValueError, IndexError, ContractViolation) as exc:
                raise ContractViolation(f"{path}:{line}: {exc}") from None
    if not out:
        raise ContractViolation(f"{path}: no rows")
    return out


# --- pair-quality prediction ------------------------------------------------

@dataclass(frozen=True, eq=False)
class QualityPredictor:
    """Predicted pair cross entropy ``h_hat[c, v, u]`` for an observation of
    class cell ``c`` at view ``v`` paired with target view ``u``."""

    grid: GridSpec
    h_hat: np.ndarray
    signatures: np.ndarray | None = None

    def dispatch(self, obs: Observation) -> int:
        return _dispatch_one(self.signatures, self.grid, obs)

    def quality(self, cls: int, view: ViewIndex) -> np.ndarray:
        """Pair quality ``exp(-h_hat)`` toward every view, shape (V,)."""
        return np.exp(-self.h_hat[cls, self.grid.index(view)])


def _pair_cross_entropy(ll: np.ndarray, cls: int) -> np.ndarray:
    """Cross entropy of every view pair for objects of one class: (S, V, K) -> (S, V, V)."""
    probs = softmax(ll[:, :, None, :] + ll[:, None, :, :])[..., cls]
    return -np.log(np.maximum(probs, PROB_FLOOR))


def fit_quality_predictor(world: SyntheticWorld, rng: np.random.Generator, samples_per_cell: int = 20) -> QualityPredictor:
    """Mean pair cross entropy over freshly sampled objects of each class.

    The per-cell mean is the least-squares fit of a lookup table to the
    sampled cross entropies.
    """
    if samples_per_cell < 1:
        raise ContractViolation("samples_per_cell must be >= 1")
    v = world.grid.n_views
    h = np.empty((world.num_classes, v, v))
    for c in range(world.num_classes):
        ll = world.loglik_table(sample_objects(world, np.full(samples_per_cell, c), rng))
        h[c] = _pair_cross_entropy(ll, c).mean(axis=0)
    return QualityPredictor(world.grid, h, world.signatures)


def quality_predictor_from_scores(table: ScoreTable) -> QualityPredictor:
    k = table.num_classes
    v = table.grid.n_views
    h = np.zeros((k, v, v))
    counts = np.bincount(table.true_class, minlength=k)
    if np.any(counts == 0):
        raise ContractViolation("every class needs at least one training object")
    for c in range(k):
        h[c] = _pair_cross_entropy(table.scores[table.true_class == c], c).mean(axis=0)
    return QualityPredictor(table.grid, h)


def save_quality_predictor(predictor: QualityPredictor, path) -> None:
    grid = predictor.grid
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "azimuth", "elevation", "target_azimuth", "target_elevation", "h_hat"])
        for c in range(predictor.h_hat.shape[0]):
            for i, v in enumerate(grid.views()):
                for j, t in enumerate(grid.views()):
                    w.writerow([c, v.azimuth, v.elevation, t.azimuth, t.elevation, repr(float(predictor.h_hat[c, i, j]))])


def load_quality_predictor(path, grid: GridSpec | None = None, signatures=None) -> QualityPredictor:
    grid = grid or GridSpec()
    cells = _read_cell_rows(path, grid, "h_hat")
    k = 1 + max(c for c, _, _ in cells)
    h = np.full((k, grid.n_views, grid.n_views), np.nan)
    for (c, s, t), val in cells.items():
        h[c, s, t] = val
    if np.isnan(h).any():
        raise ContractViolation(f"{path}: quality table is incomplete")
    return QualityPredictor(grid, h, signatures)


# --- episode cost state -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EpisodeState:
    """Visited views, their dispatched class cells, and the accumulated score ``g``.

    ``g`` is kept for every view; entries of visited views are ignored by
    the planner.
    """

    grid: GridSpec
    visited: tuple[ViewIndex, ...]
    cells: tuple[int, ...]
    g: np.ndarray

    @property
    def current(self) -> ViewIndex:
        return self.visited[-1]

    def visited_mask(self) -> np.ndarray:
        mask = np.zeros(self.grid.n_views, dtype=bool)
        mask[[self.grid.index(v) for v in self.visited]] = True
        return mask

    def unobserved_scores(self) -> np.ndarray:
        """``g`` with visited views zeroed."""
        return np.where(self.visited_mask(), 0.0, self.g)


def new_episode(grid: GridSpec) -> EpisodeState:
    return EpisodeState(grid, (), (), np.zeros(grid.n_views))


def update_costs_cell(state: EpisodeState, view: ViewIndex, cls: int, predictor: QualityPredictor) -> EpisodeState:
    view = state.grid.check(view)
    if view in state.visited:
        raise ContractViolation(f"view {tuple(view)} was already observed")
    return replace(state, visited=state.visited + (view,), cells=state.cells + (int(cls),),
                   g=state.g + predictor.quality(cls, view))


def update_costs(state: EpisodeState, new_obs: Observation, predictor: QualityPredictor) -> EpisodeState:
    """Observe ``new_obs`` and add its pair quality to every view's score."""
    return update_costs_cell(state, new_obs.view, predictor.dispatch(new_obs), predictor)


def recompute_costs(grid: GridSpec, visited: Sequence[ViewIndex], cells: Sequence[int], predictor: QualityPredictor) -> np.ndarray:
    g = np.zeros(grid.n_views)
    for v, c in zip(visited, cells):
        g = g + predictor.quality(c, v)
    return g


def score_trajectory(state: EpisodeState, path: Path) -> float:
    """Sum of ``g`` over the distinct unobserved views on ``path``."""
    seen = set(state.visited)
    grid = state.grid
    return math.fsum(state.g[grid.index(u)] for u in sorted(set(path)) if u not in seen)


# --- bounded-horizon walk search ------------------------------------------------

@lru_cache(maxsize=None)
def _walk_sets(grid: GridSpec, elevation: int, steps: int) -> np.ndarray:
    """Incidence of the maximal view-sets covered by walks from (0, elevation).

    Walks make exactly ``steps`` moves. Only sets not strictly contained in
    another reachable set are kept, since scores are sums of non-negative
    values. Returns a (V, n_sets) float matrix.
    """
    nbr = neighbor_table(grid)
    start = grid.index(ViewIndex(0, elevation))
    frontier = {(start, 1 << start)}
    for _ in range(steps):
        frontier = {(int(n), mask | (1 << int(n))) for last, mask in frontier for n in nbr[last] if n >= 0}
    masks = sorted({mask for _, mask in frontier})
    inc = np.array([[(m >> i) & 1 for i in range(grid.n_views)] for m in masks], dtype=np.float64)
    size = inc.sum(1)
    keep = np.ones(len(masks), dtype=bool)
    for lo in range(0, len(masks), 1024):
        block = inc[lo:lo + 1024]
        overlap = block @ inc.T
        contained = (overlap == size[lo:lo + 1024, None]) & (size[None, :] > size[lo:lo + 1024, None])
        keep[lo:lo + 1024] = ~contained.any(1)
    out = np.ascontiguousarray(inc[keep].T)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _azimuth_shift(grid: GridSpec) -> np.ndarray:
    """(A, V): flat index of each view after rotating it by ``a`` azimuth steps."""
    az, el = np.divmod(np.arange(grid.n_views), grid.elevation_steps)
    out = np.array([((az + a) % grid.azimuth_steps) * grid.elevation_steps + el for a in range(grid.azimuth_steps)])
    out.setflags(write=False)
    return out


def best_walk_scores(grid: GridSpec, g: np.ndarray, start: np.ndarray, steps: int, chunk: int = 2048) -> np.ndarray:
    """Best walk score from each start view, one start per row of ``g``.

    ``g`` is (n, V) with visited views already zeroed; ``start`` holds n flat
    view indices. A walk scores the sum of ``g`` over its distinct views.
    """
    out = np.empty(len(start))
    az, el = np.divmod(start, grid.elevation_steps)
    shift = _azimuth_shift(grid)
    for e in np.unique(el):
        rows = np.flatnonzero(el == e)
        sets = _walk_sets(grid, int(e), steps)
        for lo in range(0, len(rows), chunk):
            r = rows[lo:lo + chunk]
            rotated = np.take_along_axis(g[r], shift[az[r]], axis=1)
            out[r] = (rotated @ sets).max(axis=1)
    return out


def _pick(scores: np.ndarray) -> np.ndarray:
    """Column of the best score per row; near-ties go to the earliest column."""
    best = scores.max(axis=1, keepdims=True)
    tol = TIE_RTOL * np.maximum(1.0, np.abs(best))
    return np.argmax(scores >= best - tol, axis=1)


def plan_next_views(
    grid: GridSpec,
    g: np.ndarray,
    visited: np.ndarray,
    current: np.ndarray,
    remaining_steps: int,
    horizon_cap: int = DEFAULT_PLANNER_CAP,
) -> tuple[np.ndarray, np.ndarray]:
    """Receding-horizon choice of the next view for a batch of episodes.

    Returns the chosen flat view per row and whether the row had no
    unvisited neighbour and fell back to the best unvisited view anywhere.
    """
    if remaining_steps < 1:
        raise ContractViolation("remaining_steps must be >= 1")
    if horizon_cap < 0:
        raise HorizonExceeded("horizon cap must be >= 0")
    n = len(current)
    masked = np.where(visited, 0.0, g)
    nbr = neighbor_table(grid)[current]
    rows, cols = np.nonzero(nbr >= 0)
    ok = ~visited[rows, nbr[rows, cols]]
    rows, cols = rows[ok], cols[ok]
    scores = np.full(nbr.shape, -np.inf)
    steps = min(remaining_steps - 1, horizon_cap)
    if len(rows):
        scores[rows, cols] = best_walk_scores(grid, masked[rows], nbr[rows, cols], steps)
    choice = nbr[np.arange(n), _pick(scores)]
    stuck = ~np.isfinite(scores).any(axis=1)
    if stuck.any():
        if visited[stuck].all(axis=1).any():
            raise EpisodeComplete("every view has been visited")
        glob = np.where(visited[stuck], -np.inf, g[stuck])
        choice[stuck] = _pick(glob)
    return choice, stuck


def optimised_next(state: EpisodeState, remaining_steps: int, horizon_cap: int = DEFAULT_PLANNER_CAP) -> ViewIndex:
    """Neighbour of the current view whose best walk scores highest.

    Walks start at the candidate and make ``min(remaining_steps - 1,
    horizon_cap)`` further moves. Near-ties go to the lexicographically
    smallest candidate.
    """
    if not state.visited:
        raise ContractViolation("the episode has no current view yet")
    grid = state.grid
    choice, _ = plan_next_views(grid, state.g[None], state.visited_mask()[None],
                                np.array([grid.index(state.current)]), remaining_steps, horizon_cap)
    return grid.view(int(choice[0]))
