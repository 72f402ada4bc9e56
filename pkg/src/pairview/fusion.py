"""Pairwise decomposition of view sequences and weighted ensemble fusion.

A sequence of M views yields M(M-1)/2 view pairs. Each pair is classified on
its own, and the sequence prediction is a weighted average of the pair
distributions, with one weight per relative pose learned from how well
training pairs at that pose were classified.

Pairs are listed in arrival order: each new view pairs with every earlier
view, so ``(0, 1), (0, 2), (1, 2), (0, 3), ...``. Every sum over pairs in
this module runs in that order, which keeps per-sequence and batched
results bit-identical.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractViolation, CoverageError
from .sensorium import (
    Observation,
    ScoreTable,
    SyntheticWorld,
    argmax_label,
    make_pair,
    pair_posterior,
    single_posterior,
    softmax,
)
from .viewsphere import GridSpec, RelativePose, ViewIndex, pose_index_matrix, realisable_poses, relative_pose

PROB_FLOOR = 1e-12
FUSION_MODES = ("all", "best")


def cross_entropy(dist: np.ndarray, true_class: int) -> float:
    return -math.log(max(float(dist[true_class]), PROB_FLOOR))


def enumerate_pairs(views: Sequence) -> list[tuple[int, int]]:
    """Index pairs ``(i, j)`` with ``i < j`` over sequence positions, in arrival order."""
    if len(views) < 1:
        raise ContractViolation("need at least one view")
    return [(i, j) for j in range(1, len(views)) for i in range(j)]


@dataclass(frozen=True, eq=False)
class WeightTable:
    """Per-relative-pose weights and the mean cross entropy they came from."""

    grid: GridSpec
    poses: tuple[RelativePose, ...]
    mean_cross_entropy: np.ndarray
    lam: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        if not (np.all(np.isfinite(self.lam)) and np.all(self.lam >= 0)):
            raise ContractViolation("weights must be finite and non-negative")

    @cached_property
    def _lookup(self) -> dict[RelativePose, int]:
        return {p: i for i, p in enumerate(self.poses)}

    def weight(self, pose: RelativePose) -> float:
        return float(self.lam[self._lookup[RelativePose(*pose)]])

    @cached_property
    def view_matrix(self) -> np.ndarray:
        """(V, V) weight of the pair (a, b) by flat view index."""
        if self.poses != realisable_poses(self.grid):
            raise ContractViolation("weight table does not cover the grid's poses")
        return self.lam[pose_index_matrix(self.grid)]

    def equals(self, other: "WeightTable") -> bool:
        return (self.grid == other.grid and self.poses == other.poses
                and np.array_equal(self.mean_cross_entropy, other.mean_cross_entropy)
                and np.array_equal(self.lam, other.lam))


class TrainingPairs(NamedTuple):
    """Sampled training pairs: pose id, object row and the two flat view indices."""

    pose: np.ndarray
    obj: np.ndarray
    view_a: np.ndarray
    view_b: np.ndarray


def sample_training_pairs(table: ScoreTable, rng: np.random.Generator, samples_per_pose: int = 100) -> TrainingPairs:
    """Draw ``samples_per_pose`` (object, view pair) samples for every realisable pose."""
    grid = table.grid
    pidx = pose_index_matrix(grid)
    n_pose = len(realisable_poses(grid))
    a_all, b_all = np.divmod(np.arange(grid.n_views**2), grid.n_views)
    flat = pidx.ravel()
    pose, obj, va, vb = [], [], [], []
    for p in range(n_pose):
        members = np.flatnonzero(flat == p)
        pick = members[rng.integers(len(members), size=samples_per_pose)]
        pose.append(np.full(samples_per_pose, p))
        obj.append(rng.integers(len(table.object_ids), size=samples_per_pose))
        va.append(a_all[pick])
        vb.append(b_all[pick])
    cat = lambda xs: np.concatenate(xs).astype(np.intp)
    return TrainingPairs(cat(pose), cat(obj), cat(va), cat(vb))


def weights_from_samples(table: ScoreTable, samples: TrainingPairs, beta: float = 1.0, min_samples: int = 50) -> WeightTable:
    """Average pair cross entropy per pose and map it to ``exp(-beta * H)``."""
    poses = realisable_poses(table.grid)
    probs = softmax(table.scores[samples.obj, samples.view_a] + table.scores[samples.obj, samples.view_b])
    truth = table.true_class[samples.obj]
    ce = -np.log(np.maximum(probs[np.arange(len(truth)), truth], PROB_FLOOR))
    counts = np.bincount(samples.pose, minlength=len(poses))
    short = [tuple(poses[i]) for i in np.flatnonzero(counts < max(min_samples, 1))]
    if short:
        raise CoverageError(f"poses with fewer than {min_samples} samples: {short}")
    mean_ce = np.bincount(samples.pose, weights=ce, minlength=len(poses)) / counts
    return WeightTable(table.grid, poses, mean_ce, np.exp(-beta * mean_ce), beta)


def learn_weights(
    table: ScoreTable,
    rng: np.random.Generator,
    samples_per_pose: int = 100,
    min_samples: int = 50,
    beta: float = 1.0,
) -> WeightTable:
    """Learn one weight per relative pose from training objects in ``table``."""
    if len(table.object_ids) < 1:
        raise ContractViolation("need at least one training object")
    samples = sample_training_pairs(table, rng, samples_per_pose)
    return weights_from_samples(table, samples, beta, min_samples)


def save_weights(weights: WeightTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d_azimuth", "d_elevation", "mean_cross_entropy", "lambda"])
        for p, h, lam in zip(weights.poses, weights.mean_cross_entropy, weights.lam):
            w.writerow([p.d_azimuth, p.d_elevation, repr(float(h)), repr(float(lam))])


def load_weights(path, grid: GridSpec | None = None, beta: float = 1.0) -> WeightTable:
    grid = grid or GridSpec()
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["d_azimuth", "d_elevation", "mean_cross_entropy", "lambda"]:
            raise ContractViolation(f"{path}: bad weight-table header")
        for line, rec in enumerate(reader, start=2):
            try:
                p = RelativePose(int(rec[0]), int(rec[1]))
                rows[p] = (float(rec[2]), float(rec[3]))
            except (ValueError, IndexError) as exc:
                raise ContractViolation(f"{path}:{line}: {exc}") from None
    poses = realisable_poses(grid)
    missing = [tuple(p) for p in poses if p not in rows]
    if missing or len(rows) != len(poses):
        raise CoverageError(f"{path}: weight table does not match the grid's poses (missing {missing})")
    h = np.array([rows[p][0] for p in poses])
    lam = np.array([rows[p][1] for p in poses])
    return WeightTable(grid, poses, h, lam, beta)


def select_pairs(
    pairs: Sequence[tuple[int, int]],
    pair_weights: Sequence[float] | None,
    mode: str,
    m: int,
) -> list[int]:
    """Positions of the pairs to keep.

    ``all`` keeps every pair. ``best`` keeps the ``min(m, N)`` pairs of
    largest weight, breaking ties by earlier first index, then earlier
    second index. Kept positions come back in their original order.
    """
    if mode == "all":
        return list(range(len(pairs)))
    if mode != "best":
        raise ContractViolation(f"unknown pair selection mode {mode!r}")
    if pair_weights is None:
        raise ContractViolation("best-pair selection needs weights")
    ranked = sorted(range(len(pairs)), key=lambda k: (-pair_weights[k], pairs[k]))
    return sorted(ranked[: min(m, len(pairs))])


def fuse(
    pair_distributions: Sequence[np.ndarray],
    pair_poses: Sequence[RelativePose],
    weights: WeightTable | None = None,
) -> np.ndarray:
    """Weighted average of pair distributions, renormalised to sum to one.

    Without a weight table every pair counts equally.
    """
    if len(pair_distributions) == 0 or len(pair_distributions) != len(pair_poses):
        raise ContractViolation("need equally many (and at least one) distributions and poses")
    total = np.zeros_like(np.asarray(pair_distributions[0], dtype=float))
    for p, pose in zip(pair_distributions, pair_poses):
        lam = 1.0 if weights is None else weights.weight(pose)
        total += lam * np.asarray(p, dtype=float)
    return total / total.sum()


def classify_logliks(
    grid: GridSpec,
    views: Sequence[ViewIndex],
    logliks: np.ndarray,
    weights: WeightTable | None = None,
    mode: str = "all",
    weighted: bool = True,
) -> tuple[int, np.ndarray]:
    """Classify a view sequence from its per-view log-likelihoods (M, K)."""
    m = len(views)
    if m < 1:
        raise ContractViolation("need at least one view")
    if m == 1:
        dist = softmax(logliks[0])
        return argmax_label(dist), dist
    pairs = enumerate_pairs(views)
    poses = [relative_pose(grid, views[i], views[j]) for i, j in pairs]
    lam = None if weights is None else [weights.weight(p) for p in poses]
    keep = select_pairs(pairs, lam, mode, m)
    dists = [softmax(logliks[pairs[k][0]] + logliks[pairs[k][1]]) for k in keep]
    dist = fuse(dists, [poses[k] for k in keep], weights if weighted else None)
    return argmax_label(dist), dist


def classify_sequence(
    world: SyntheticWorld,
    observations: Sequence[Observation],
    weights: WeightTable | None = None,
    mode: str = "all",
    weighted: bool = True,
) -> tuple[int, np.ndarray]:
    """Predicted label and fused distribution for a sequence of observations.

    ``weights`` drives both best-pair selection and the fusion weights;
    ``weighted=False`` keeps the selection but averages pairs equally. A
    single observation falls back to its single-view posterior.
    """
    m = len(observations)
    if m < 1:
        raise ContractViolation("need at least one observation")
    if m == 1:
        dist = single_posterior(world, observations[0])
        return argmax_label(dist), dist
    grid = world.grid
    pairs = enumerate_pairs(observations)
    vp = [make_pair(grid, observations[i], observations[j]) for i, j in pairs]
    lam = None if weights is None else [weights.weight(p.pose) for p in vp]
    keep = select_pairs(pairs, lam, mode, m)
    dist = fuse([pair_posterior(world, vp[k]) for k in keep], [vp[k].pose for k in keep], weights if weighted else None)
    return argmax_label(dist), dist


def vote_views(world: SyntheticWorld, observations: Sequence[Observation]) -> int:
    """View Voting baseline: average the single-view posteriors."""
    if len(observations) < 1:
        raise ContractViolation("need at least one observation")
    total = np.zeros(world.num_classes)
    for obs in observations:
        total += single_posterior(world, obs)
    return argmax_label(total / len(observations))


# --- batched evaluation over many episodes ---------------------------------

def _pair_arrays(m: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = np.array(enumerate_pairs(range(m)), dtype=np.intp).reshape(-1, 2)
    return pairs[:, 0], pairs[:, 1]


def prefix_predictions(
    grid: GridSpec,
    logliks: np.ndarray,
    objects: np.ndarray,
    paths: np.ndarray,
    weights: WeightTable | None = None,
) -> np.ndarray:
    """Labels from all-pairs fusion at every prefix length, shape (E, M).

    ``logliks`` is (n_objects, V, K); ``paths`` holds flat view indices
    (E, M). Column ``m - 1`` is the prediction after ``m`` views.
    """
    e_count, m = paths.shape
    ll = logliks[objects[:, None], paths]  # (E, M, K)
    out = np.empty((e_count, m), dtype=np.intp)
    out[:, 0] = np.argmax(softmax(ll[:, 0]), axis=-1)
    if m == 1:
        return out
    ii, jj = _pair_arrays(m)
    probs = softmax(ll[:, ii] + ll[:, jj])  # (E, N, K)
    if weights is None:
        lam = np.ones(probs.shape[:2])
    else:
        lam = weights.view_matrix[paths[:, ii], paths[:, jj]]
    acc = np.cumsum(lam[..., None] * probs, axis=1)
    for k in range(2, m + 1):
        f = acc[:, k * (k - 1) // 2 - 1]
        out[:, k - 1] = np.argmax(f / f.sum(axis=-1, keepdims=True), axis=-1)
    return out


def best_pair_predictions(
    grid: GridSpec,
    logliks: np.ndarray,
    objects: np.ndarray,
    paths: np.ndarray,
    weights: WeightTable,
    weighted: bool,
) -> np.ndarray:
    """Labels from best-pair fusion using all M views of each path, shape (E,)."""
    e_count, m = paths.shape
    ll = logliks[objects[:, None], paths]
    if m == 1:
        return np.argmax(softmax(ll[:, 0]), axis=-1)
    ii, jj = _pair_arrays(m)
    lam = weights.view_matrix[paths[:, ii], paths[:, jj]]
    # rank by weight, ties by (i, j): stable sort over pairs pre-ordered by (i, j)
    lex = np.lexsort((jj, ii))
    ranked = lex[np.argsort(-lam[:, lex], axis=1, kind="stable")]
    keep = np.sort(ranked[:, : min(m, len(ii))], axis=1)
    rows = np.arange(e_count)[:, None]
    probs = softmax(ll[rows, ii[keep]] + ll[rows, jj[keep]])
    w = lam[rows, keep] if weighted else np.ones(keep.shape)
    f = np.cumsum(w[..., None] * probs, axis=1)[:, -1]
    return np.argmax(f / f.sum(axis=-1, keepdims=True), axis=-1)


def vote_prefix_predictions(logliks: np.ndarray, objects: np.ndarray, paths: np.ndarray) -> np.ndarray:
    """View Voting labels at every prefix length, shape (E, M)."""
    single = softmax(logliks[objects[:, None], paths])
    avg = np.cumsum(single, axis=1) / np.arange(1, paths.shape[1] + 1)[None, :, None]
    return np.argmax(avg, axis=-1)
