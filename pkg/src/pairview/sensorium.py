"""Classifier oracles: a seeded synthetic world and external score tables.

A :class:`SyntheticWorld` stores one feature signature per (class, view).
Observations are the signature plus isotropic Gaussian noise. With
``instance_sigma == 0`` the noise is independent across views given the
class, so the exact Bayes posterior for any set of views is a softmax over
summed per-view log-likelihoods. A positive ``instance_sigma`` adds a smooth
per-object deviation shared by nearby views, like shape differences between
two chairs; the per-view likelihood stays exact but the summed posterior
then over-counts evidence from views that look alike. External classifiers
enter through :class:`ScoreTable`, which holds per-view log-likelihood
vectors for a fixed set of objects.

Class distributions are plain float arrays of length K.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path as FilePath
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractViolation, IncompleteTableError, ScoreTableError
from .viewsphere import GridSpec, RelativePose, ViewIndex, inverse_pose, relative_pose

DIST_ATOL = 1e-9


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Normalise log-scores into probabilities without underflow."""
    logits = np.asarray(logits, dtype=float)
    top = np.max(logits, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.exp(logits - top)
    return e / e.sum(axis=axis, keepdims=True)


def check_distribution(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or np.any(probs < 0) or abs(probs.sum() - 1.0) > DIST_ATOL:
        raise ContractViolation("not a class distribution")
    return probs


def argmax_label(probs: np.ndarray) -> int:
    """Most probable class; ties go to the lowest index."""
    return int(np.argmax(probs))


def smooth_field(grid: GridSpec, rng: np.random.Generator, size: int, length_scale: float) -> np.ndarray:
    """Draw ``size`` independent zero-mean unit-variance smooth fields over the views.

    Uses a squared-exponential kernel on chord distance between view
    positions. Returns shape (size, V).
    """
    xyz = grid.unit_vectors()
    d2 = ((xyz[:, None, :] - xyz[None, :, :]) ** 2).sum(-1)
    cov = np.exp(-d2 / (2.0 * length_scale**2))
    w, q = np.linalg.eigh(cov)
    root = q * np.sqrt(np.clip(w, 0.0, None))
    z = rng.standard_normal((size, grid.n_views))
    return z @ root.T


def ambiguity_profile(grid: GridSpec, rng: np.random.Generator, low: float, high: float, length_scale: float = 0.8) -> np.ndarray:
    """Per-view ambiguity in [low, high] that varies smoothly over the sphere."""
    if not 0.0 <= low <= high <= 1.0:
        raise ContractViolation(f"need 0 <= low <= high <= 1, got {low}, {high}")
    if low == high:
        return np.full(grid.n_views, float(low))
    f = smooth_field(grid, rng, 1, length_scale)[0]
    span = f.max() - f.min()
    f = (f - f.min()) / span if span > 0 else np.zeros_like(f)
    return low + (high - low) * f


class Observation(NamedTuple):
    features: np.ndarray
    view: ViewIndex


class ViewPair(NamedTuple):
    obs_a: Observation
    obs_b: Observation
    pose: RelativePose


def make_pair(grid: GridSpec, obs_a: Observation, obs_b: Observation) -> ViewPair:
    return ViewPair(obs_a, obs_b, relative_pose(grid, obs_a.view, obs_b.view))


def swap_pair(grid: GridSpec, pair: ViewPair) -> ViewPair:
    return ViewPair(pair.obs_b, pair.obs_a, inverse_pose(grid, pair.pose))


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    seed: int
    num_classes: int
    grid: GridSpec
    feature_dim: int
    noise_sigma: float
    ambiguity: np.ndarray  # (V,)
    signatures: np.ndarray  # (K, V, D)
    instance_sigma: float = 0.0
    length_scale: float = 0.8

    @property
    def likelihood_sigma(self) -> float:
        """Per-view spread of an observation around its class signature."""
        return math.hypot(self.noise_sigma, self.instance_sigma)

    def signature(self, cls: int, view: ViewIndex) -> np.ndarray:
        return self.signatures[cls, self.grid.index(view)]

    def log_likelihoods(self, obs: Observation) -> np.ndarray:
        """Gaussian log-density of ``obs`` under every class, shape (K,)."""
        mu = self.signatures[:, self.grid.index(obs.view)]
        return _gauss_loglik(np.asarray(obs.features, dtype=float), mu, self.likelihood_sigma)

    def loglik_table(self, features: np.ndarray) -> np.ndarray:
        """Log-likelihoods for stacked observations of shape (..., V, D) -> (..., V, K)."""
        diff = features[..., None, :, :] - self.signatures  # (..., K, V, D)
        sq = (diff**2).sum(-1)
        s2 = self.likelihood_sigma**2
        ll = -0.5 * sq / s2 - 0.5 * self.feature_dim * math.log(2 * math.pi * s2)
        return np.swapaxes(ll, -1, -2)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "num_classes": self.num_classes,
            "grid": {"azimuth_steps": self.grid.azimuth_steps, "elevation_steps": self.grid.elevation_steps,
                     "step_degrees": self.grid.step_degrees},
            "feature_dim": self.feature_dim,
            "noise_sigma": self.noise_sigma,
            "instance_sigma": self.instance_sigma,
            "length_scale": self.length_scale,
            "ambiguity": self.ambiguity.tolist(),
            "signatures": self.signatures.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticWorld":
        grid = GridSpec(**d["grid"])
        sig = np.array(d["signatures"], dtype=float)
        amb = np.array(d["ambiguity"], dtype=float)
        k = int(d["num_classes"])
        if sig.shape != (k, grid.n_views, int(d["feature_dim"])) or amb.shape != (grid.n_views,):
            raise ContractViolation("world file arrays do not match its declared sizes")
        return cls(int(d["seed"]), k, grid, int(d["feature_dim"]), float(d["noise_sigma"]), amb, sig,
                   float(d.get("instance_sigma", 0.0)), float(d.get("length_scale", 0.8)))

    def equals(self, other: "SyntheticWorld") -> bool:
        return (self.seed == other.seed and self.num_classes == other.num_classes and self.grid == other.grid
                and self.feature_dim == other.feature_dim and self.noise_sigma == other.noise_sigma
                and self.instance_sigma == other.instance_sigma and self.length_scale == other.length_scale
                and np.array_equal(self.ambiguity, other.ambiguity)
                and np.array_equal(self.signatures, other.signatures))


def _gauss_loglik(x: np.ndarray, mu: np.ndarray, sigma: float) -> np.ndarray:
    d = x.shape[-1]
    s2 = sigma * sigma
    return -0.5 * ((x - mu) ** 2).sum(-1) / s2 - 0.5 * d * math.log(2 * math.pi * s2)


def gen_world(
    seed: int,
    num_classes: int,
    grid: GridSpec | None = None,
    feature_dim: int = 8,
    noise_sigma: float = 1.0,
    ambiguity: float | Sequence[float] | np.ndarray = 0.0,
    length_scale: float = 0.8,
    instance_sigma: float = 0.0,
) -> SyntheticWorld:
    """Generate class signatures over the grid, reproducible from ``seed``.

    Each (class, feature) signature is a smooth random field over the sphere,
    so nearby views look alike. Then at every view the class signatures are
    pulled toward their cross-class mean by that view's ambiguity; an
    ambiguity of 1 makes the view useless for telling classes apart.
    ``instance_sigma`` scales the per-object deviation drawn by
    :func:`sample_objects`.
    """
    grid = grid or GridSpec()
    if num_classes < 2 or feature_dim < 1 or not noise_sigma > 0 or not length_scale > 0:
        raise ContractViolation("need num_classes >= 2, feature_dim >= 1, noise_sigma > 0, length_scale > 0")
    if not instance_sigma >= 0:
        raise ContractViolation("instance_sigma must be >= 0")
    amb = np.broadcast_to(np.asarray(ambiguity, dtype=float), (grid.n_views,)).copy()
    if np.any(amb < 0) or np.any(amb > 1):
        raise ContractViolation("ambiguity must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    fields = smooth_field(grid, rng, num_classes * feature_dim, length_scale)
    sig = fields.reshape(num_classes, feature_dim, grid.n_views).transpose(0, 2, 1)
    mean = sig.mean(axis=0, keepdims=True)
    a = amb[None, :, None]
    sig = (1.0 - a) * sig + a * mean
    # exact equality where the blend is total
    full = amb == 1.0
    sig[:, full] = mean[:, full]
    return SyntheticWorld(int(seed), int(num_classes), grid, int(feature_dim), float(noise_sigma), amb, sig,
                          float(instance_sigma), float(length_scale))


def observe(world: SyntheticWorld, cls: int, view: ViewIndex, rng: np.random.Generator) -> Observation:
    """One view of a fresh object, drawn from the per-view marginal."""
    if not 0 <= cls < world.num_classes:
        raise ContractViolation(f"class {cls} out of range")
    view = world.grid.check(view)
    noise = rng.standard_normal(world.feature_dim) * world.likelihood_sigma
    return Observation(world.signature(cls, view) + noise, view)


def sample_objects(world: SyntheticWorld, classes: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Fixed noisy appearance of each object at every view, shape (n, V, D).

    An object is one draw of observation noise per view, plus a smooth
    instance deviation when ``instance_sigma > 0``; re-visiting a view of
    the same object always yields the same observation.
    """
    classes = np.asarray(classes, dtype=int)
    noise = rng.standard_normal((len(classes), world.grid.n_views, world.feature_dim)) * world.noise_sigma
    out = world.signatures[classes] + noise
    if world.instance_sigma > 0:
        shape = smooth_field(world.grid, rng, len(classes) * world.feature_dim, world.length_scale)
        out += world.instance_sigma * shape.reshape(len(classes), world.feature_dim, -1).transpose(0, 2, 1)
    return out


def single_posterior(world: SyntheticWorld, obs: Observation) -> np.ndarray:
    return softmax(world.log_likelihoods(obs))


def pair_posterior(world: SyntheticWorld, pair: ViewPair) -> np.ndarray:
    """Posterior for a view pair under a uniform class prior.

    Exact Bayes when the world has no instance deviation; otherwise it
    treats the two views as independent.
    """
    return softmax(world.log_likelihoods(pair.obs_a) + world.log_likelihoods(pair.obs_b))


# --- external score tables ------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Per-view class log-likelihoods for a set of objects.

    ``scores`` has shape (n_objects, V, K) in flat view order.
    """

    grid: GridSpec
    object_ids: tuple[str, ...]
    true_class: np.ndarray
    scores: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.scores.shape[-1]

    def row(self, object_id: str) -> int:
        try:
            return self.object_ids.index(object_id)
        except ValueError:
            raise KeyError(f"unknown object {object_id!r}") from None

    def subset(self, rows: Sequence[int]) -> "ScoreTable":
        rows = list(rows)
        return ScoreTable(self.grid, tuple(self.object_ids[r] for r in rows), self.true_class[rows], self.scores[rows])

    def equals(self, other: "ScoreTable") -> bool:
        return (self.grid == other.grid and self.object_ids == other.object_ids
                and np.array_equal(self.true_class, other.true_class)
                and self.scores.shape == other.scores.shape
                and np.array_equal(self.scores.view(np.uint64), other.scores.view(np.uint64)))


def score_table_from_world(world: SyntheticWorld, classes: Sequence[int], features: np.ndarray, prefix: str = "obj") -> ScoreTable:
    ids = tuple(f"{prefix}{i:05d}" for i in range(len(classes)))
    return ScoreTable(world.grid, ids, np.asarray(classes, dtype=int), world.loglik_table(features))


def save_score_table(table: ScoreTable, path) -> None:
    k = table.num_classes
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["object_id", "true_class", "azimuth", "elevation"] + [f"s{i}" for i in range(k)])
        for r, oid in enumerate(table.object_ids):
            for i, v in enumerate(table.grid.views()):
                w.writerow([oid, int(table.true_class[r]), v.azimuth, v.elevation]
                           + [repr(float(s)) for s in table.scores[r, i]])


def load_score_table(path, grid: GridSpec | None = None) -> ScoreTable:
    """Read a score-table CSV and check it covers every view of ``grid``."""
    grid = grid or GridSpec()
    path = FilePath(path)
    cells: dict[str, dict[int, list[float]]] = {}
    truth: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ScoreTableError(f"{path}: empty file") from None
        if header[:4] != ["object_id", "true_class", "azimuth", "elevation"] or len(header) < 6:
            raise ScoreTableError(f"{path}:1: bad header {header!r}")
        k = len(header) - 4
        if header[4:] != [f"s{i}" for i in range(k)]:
            raise ScoreTableError(f"{path}:1: score columns must be s0..s{k - 1}")
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 4 + k:
                raise ScoreTableError(f"{path}:{line}: expected {4 + k} fields for K={k}, got {len(rec)}")
            oid = rec[0]
            try:
                cls, az, el = int(rec[1]), int(rec[2]), int(rec[3])
                scores = [float(s) for s in rec[4:]]
            except ValueError as exc:
                raise ScoreTableError(f"{path}:{line}: {exc}") from None
            if not 0 <= cls < k:
                raise ScoreTableError(f"{path}:{line}: true_class {cls} outside 0..{k - 1}")
            if not grid.contains((az, el)):
                raise ScoreTableError(f"{path}:{line}: view ({az},{el}) outside the grid")
            if any(math.isnan(s) or s == math.inf for s in scores):
                raise ScoreTableError(f"{path}:{line}: scores must be finite or -inf")
            if truth.setdefault(oid, cls) != cls:
                raise ScoreTableError(f"{path}:{line}: object {oid!r} has conflicting true_class")
            per = cells.setdefault(oid, {})
            idx = grid.index(ViewIndex(az, el))
            if idx in per:
                raise ScoreTableError(f"{path}:{line}: duplicate row for object {oid!r} view ({az},{el})")
            per[idx] = scores
    if not cells:
        raise ScoreTableError(f"{path}: no rows")
    ids = tuple(cells)
    out = np.empty((len(ids), grid.n_views, k))
    for r, oid in enumerate(ids):
        for i in range(grid.n_views):
            if i not in cells[oid]:
                v = grid.view(i)
                raise IncompleteTableError(f"{path}: missing cell for object {oid!r} view ({v.azimuth},{v.elevation})")
            out[r, i] = cells[oid][i]
    return ScoreTable(grid, ids, np.array([truth[o] for o in ids], dtype=int), out)


def posterior_from_scores(table: ScoreTable, object_id: str, views: Sequence[ViewIndex]) -> np.ndarray:
    """Naive-Bayes combination of per-view scores under a uniform prior."""
    r = table.row(object_id)
    idx = []
    for v in views:
        if not table.grid.contains(v):
            raise KeyError(f"unknown view {tuple(v)}")
        idx.append(table.grid.index(v))
    if not idx:
        raise ContractViolation("need at least one view")
    return softmax(table.scores[r, idx].sum(axis=0))


def save_world(world: SyntheticWorld, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(world.to_dict(), fh)


def load_world(path) -> SyntheticWorld:
    with open(path, encoding="utf-8") as fh:
        return SyntheticWorld.from_dict(json.load(fh))
