"""Seeded benchmark runs: strategy tables, the fusion ablation and accuracy curves.

One run covers every configured seed. Per seed the harness builds a world
(or splits an ingested score table), learns pose weights and fits the view
selection lookups on training objects, then runs one episode per test
object per start view for every strategy. Accuracy for a cell is the
fraction of those episodes whose final prediction is correct.

Random streams are derived from the seed and a label, so the draws of one
strategy or stage never depend on which others are configured.
"""

from __future__ import annotations

import csv
import io
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path as FilePath
from typing import NamedTuple, Sequence

import numpy as np

from .episodes import STRATEGIES, EpisodeDraws, Planners, run_episodes
from .errors import ConfigError, ContractViolation
from .fusion import WeightTable, best_pair_predictions, learn_weights, prefix_predictions, vote_prefix_predictions
from .policy import (
    DEFAULT_PLANNER_CAP,
    dispatch_cells,
    fit_nbv_policy,
    fit_quality_predictor,
    nbv_policy_from_scores,
    quality_predictor_from_scores,
)
from .sensorium import (
    ScoreTable,
    SyntheticWorld,
    ambiguity_profile,
    gen_world,
    sample_objects,
    score_table_from_world,
)
from .viewsphere import UNIT_DIRECTIONS, GridSpec

FUSIONS = ("all-weighted", "all-unweighted", "best-weighted", "best-unweighted", "vote")
VOTE_STRATEGIES = ("random", "straight")


def _fail(msg: str):
    raise ConfigError(msg)


@dataclass(frozen=True)
class BenchConfig:
    """Everything a benchmark run depends on, besides an optional score table."""

    grid: GridSpec = field(default_factory=GridSpec)
    num_classes: int = 10
    feature_dim: int = 8
    noise_sigma: float = 0.55
    instance_sigma: float = 0.45
    ambiguity_low: float = 0.0
    ambiguity_high: float = 0.85
    length_scale: float = 0.8
    train_per_class: int = 20
    test_per_class: int = 20
    lengths: tuple[int, ...] = (3, 6, 12)
    strategies: tuple[str, ...] = STRATEGIES
    fusion: str = "all"
    beta: float = 1.0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    samples_per_pose: int = 100
    min_samples: int = 50
    quality_samples: int = 20
    horizon_cap: int = DEFAULT_PLANNER_CAP
    ablation_length: int = 6
    train_fraction: float = 0.5  # share of each class used for training when ingesting scores

    def __post_init__(self):
        ints = ("num_classes", "feature_dim", "train_per_class", "test_per_class", "samples_per_pose",
                "min_samples", "quality_samples", "horizon_cap", "ablation_length")
        for name in ints:
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, (int, np.integer)):
                _fail(f"{name} must be an integer, got {val!r}")
        for name in ("noise_sigma", "instance_sigma", "ambiguity_low", "ambiguity_high", "length_scale", "beta",
                     "train_fraction"):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
                _fail(f"{name} must be a finite number, got {val!r}")
        if self.num_classes < 2:
            _fail("num_classes must be >= 2")
        if self.feature_dim < 1:
            _fail("feature_dim must be >= 1")
        if not self.noise_sigma > 0:
            _fail("noise_sigma must be > 0")
        if self.instance_sigma < 0:
            _fail("instance_sigma must be >= 0")
        if not 0 <= self.ambiguity_low <= self.ambiguity_high <= 1:
            _fail("need 0 <= ambiguity_low <= ambiguity_high <= 1")
        if not self.length_scale > 0:
            _fail("length_scale must be > 0")
        if self.train_per_class < 1 or self.test_per_class < 1:
            _fail("train_per_class and test_per_class must be >= 1")
        if not self.lengths:
            _fail("lengths must not be empty")
        for m in self.lengths:
            if isinstance(m, bool) or not isinstance(m, (int, np.integer)) or not 1 <= m <= self.grid.n_views:
                _fail(f"every length must be an integer in 1..{self.grid.n_views}, got {m!r}")
        if not self.strategies:
            _fail("strategies must not be empty")
        for s in self.strategies:
            if s not in STRATEGIES:
                _fail(f"unknown strategy {s!r}; choose from {', '.join(STRATEGIES)}")
        if len(set(self.strategies)) != len(self.strategies) or len(set(self.lengths)) != len(self.lengths):
            _fail("strategies and lengths must not repeat")
        if self.fusion not in ("all", "best"):
            _fail(f"fusion must be 'all' or 'best', got {self.fusion!r}")
        if self.beta < 0:
            _fail("beta must be >= 0")
        if not self.seeds:
            _fail("seeds must not be empty")
        for s in self.seeds:
            if isinstance(s, bool) or not isinstance(s, (int, np.integer)) or s < 0:
                _fail(f"seeds must be non-negative integers, got {s!r}")
        if len(set(self.seeds)) != len(self.seeds):
            _fail("seeds must not repeat")
        if self.samples_per_pose < 1 or self.min_samples < 0 or self.quality_samples < 1:
            _fail("samples_per_pose and quality_samples must be >= 1, min_samples >= 0")
        if self.horizon_cap < 0:
            _fail("horizon_cap must be >= 0")
        if not 1 <= self.ablation_length <= self.grid.n_views:
            _fail(f"ablation_length must be in 1..{self.grid.n_views}")
        if not 0 < self.train_fraction < 1:
            _fail("train_fraction must be in (0, 1)")

    @property
    def max_length(self) -> int:
        return max(self.lengths)

    def replace(self, **changes) -> "BenchConfig":
        d = self.to_dict()
        d.update(changes)
        return BenchConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lengths"] = list(self.lengths)
        d["strategies"] = list(self.strategies)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        if not isinstance(d, dict):
            _fail("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            _fail(f"unknown configuration keys: {', '.join(unknown)}")
        d = dict(d)
        if "grid" in d:
            g = d["grid"]
            if isinstance(g, GridSpec):
                pass
            elif isinstance(g, dict):
                bad = sorted(set(g) - {"azimuth_steps", "elevation_steps", "step_degrees"})
                if bad:
                    _fail(f"unknown grid keys: {', '.join(bad)}")
                try:
                    d["grid"] = GridSpec(**g)
                except (ContractViolation, TypeError) as exc:
                    raise ConfigError(f"grid: {exc}") from None
            else:
                _fail("grid must be an object")
        for name in ("lengths", "strategies", "seeds"):
            if name in d:
                if isinstance(d[name], (str, bytes)) or not isinstance(d[name], (list, tuple)):
                    _fail(f"{name} must be a list")
                d[name] = tuple(d[name])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "BenchConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(data)


# --- seeding -------------------------------------------------------------------

def stream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for ``seed`` and a path of labels (strings or ints)."""
    key = tuple(zlib.crc32(x.encode()) if isinstance(x, str) else int(x) for x in labels)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def episode_rng(seed: int, strategy: str, obj: int, start: int) -> np.random.Generator:
    """The random source of one episode: (test object row, flat start view)."""
    return stream(seed, "episode", strategy, obj, start)


def _episode_draws(seed: int, strategy: str, n_obj: int, n_views: int, length: int) -> EpisodeDraws:
    e = n_obj * n_views
    direction = np.zeros(e, dtype=np.intp)
    uniforms = np.zeros((e, length))
    if strategy in ("random", "straight"):
        for i in range(e):
            rng = episode_rng(seed, strategy, i // n_views, i % n_views)
            direction[i] = rng.integers(len(UNIT_DIRECTIONS))
            uniforms[i] = rng.random(length)
    return EpisodeDraws(direction, uniforms)


# --- per-seed setup ------------------------------------------------------------

class SeedSetup(NamedTuple):
    """What the episodes of one seed need."""

    grid: GridSpec
    logliks: np.ndarray  # (n_test, V, K)
    truth: np.ndarray  # (n_test,)
    cells: np.ndarray  # (n_test, V) dispatched class cell per view
    weights: WeightTable
    planners: Planners


def make_world(config: BenchConfig, seed: int) -> SyntheticWorld:
    amb = ambiguity_profile(config.grid, stream(seed, "ambiguity"), config.ambiguity_low, config.ambiguity_high,
                            config.length_scale)
    return gen_world(seed, config.num_classes, config.grid, config.feature_dim, config.noise_sigma, amb,
                     config.length_scale, config.instance_sigma)


def world_tables(config: BenchConfig, seed: int, world: SyntheticWorld | None = None):
    """World plus train and test score tables and the test features."""
    world = world or make_world(config, seed)
    k = config.num_classes
    train_cls = np.repeat(np.arange(k), config.train_per_class)
    test_cls = np.repeat(np.arange(k), config.test_per_class)
    train_feat = sample_objects(world, train_cls, stream(seed, "train"))
    test_feat = sample_objects(world, test_cls, stream(seed, "test"))
    train = score_table_from_world(world, train_cls, train_feat, "train")
    test = score_table_from_world(world, test_cls, test_feat, "test")
    return world, train, test, test_feat


def split_scores(table: ScoreTable, seed: int, train_fraction: float) -> tuple[ScoreTable, ScoreTable]:
    """Seeded per-class split of an ingested table into train and test objects."""
    rng = stream(seed, "split")
    train, test = [], []
    for c in range(table.num_classes):
        rows = np.flatnonzero(table.true_class == c)
        if len(rows) < 2:
            raise ContractViolation(f"class {c} needs at least two objects to split, has {len(rows)}")
        rows = rows[rng.permutation(len(rows))]
        n_train = min(max(1, int(round(train_fraction * len(rows)))), len(rows) - 1)
        train.extend(rows[:n_train].tolist())
        test.extend(rows[n_train:].tolist())
    return table.subset(sorted(train)), table.subset(sorted(test))


def setup_seed(config: BenchConfig, seed: int, scores: ScoreTable | None = None) -> SeedSetup:
    needs_nbv = any(s.startswith("nbv") for s in config.strategies)
    needs_quality = "optimised" in config.strategies
    nbv = quality = None
    if scores is None:
        world, train, test, test_feat = world_tables(config, seed)
        if needs_nbv:
            nbv = fit_nbv_policy(world)
        if needs_quality:
            quality = fit_quality_predictor(world, stream(seed, "quality"), config.quality_samples)
        cells = dispatch_cells(world.signatures, test_feat)
    else:
        train, test = split_scores(scores, seed, config.train_fraction)
        if needs_nbv:
            nbv = nbv_policy_from_scores(train)
        if needs_quality:
            quality = quality_predictor_from_scores(train)
        # no features to match against: dispatch to the most likely class at that view
        cells = np.argmax(test.scores, axis=-1)
    weights = learn_weights(train, stream(seed, "weights"), config.samples_per_pose, config.min_samples, config.beta)
    return SeedSetup(test.grid, test.scores, test.true_class, cells,
                     weights, Planners(nbv, quality, config.horizon_cap))


# --- results -------------------------------------------------------------------

class ResultRow(NamedTuple):
    strategy: str
    fusion: str
    length: int
    seed: int
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


class Summary(NamedTuple):
    strategy: str
    fusion: str
    length: int
    seeds: int
    mean: float
    std: float


def _row_key(r) -> tuple:
    s = STRATEGIES.index(r.strategy) if r.strategy in STRATEGIES else len(STRATEGIES)
    f = FUSIONS.index(r.fusion) if r.fusion in FUSIONS else len(FUSIONS)
    return (s, r.strategy, f, r.fusion, r.length, getattr(r, "seed", 0))


@dataclass(frozen=True)
class ResultsTable:
    """Per-seed accuracy counts, kept in a canonical order."""

    rows: tuple[ResultRow, ...] = ()

    def __post_init__(self):
        rows = tuple(sorted((ResultRow(*r) for r in self.rows), key=_row_key))
        keys = [(r.strategy, r.fusion, r.length, r.seed) for r in rows]
        if len(set(keys)) != len(keys):
            raise ContractViolation("duplicate result cell")
        for r in rows:
            if r.total < 1 or not 0 <= r.correct <= r.total:
                raise ContractViolation(f"bad counts in {r}")
        object.__setattr__(self, "rows", rows)

    def merge(self, other: "ResultsTable") -> "ResultsTable":
        return ResultsTable(self.rows + other.rows)

    def accuracy(self, strategy: str, fusion: str, length: int, seed: int) -> float:
        for r in self.rows:
            if (r.strategy, r.fusion, r.length, r.seed) == (strategy, fusion, length, seed):
                return r.accuracy
        raise KeyError((strategy, fusion, length, seed))

    def summary(self) -> list[Summary]:
        """Mean and sample standard deviation of accuracy across seeds."""
        groups: dict[tuple, list[float]] = {}
        for r in self.rows:
            groups.setdefault((r.strategy, r.fusion, r.length), []).append(r.accuracy)
        out = []
        for (s, f, m), acc in groups.items():
            a = np.array(acc)
            std = float(a.std(ddof=1)) if len(a) > 1 else 0.0
            out.append(Summary(s, f, m, len(a), math.fsum(acc) / len(acc), std))
        return out

    def mean(self, strategy: str, fusion: str, length: int) -> float:
        for s in self.summary():
            if (s.strategy, s.fusion, s.length) == (strategy, fusion, length):
                return s.mean
        raise KeyError((strategy, fusion, length))


RESULT_HEADER = ["strategy", "fusion", "length", "seed", "correct", "total", "accuracy"]
SUMMARY_HEADER = ["strategy", "fusion", "length", "seeds", "mean", "std"]


def results_csv(table: ResultsTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_HEADER)
    for r in table.rows:
        w.writerow([r.strategy, r.fusion, r.length, r.seed, r.correct, r.total, f"{r.accuracy:.6f}"])
    return buf.getvalue()


def summary_csv(table: ResultsTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for s in table.summary():
        w.writerow([s.strategy, s.fusion, s.length, s.seeds, f"{s.mean:.6f}", f"{s.std:.6f}"])
    return buf.getvalue()


def results_markdown(table: ResultsTable) -> str:
    """Accuracy in percent, mean ± std over seeds; one row per (strategy, fusion)."""
    summary = table.summary()
    lengths = sorted({s.length for s in summary})
    header = "| Strategy | Fusion | " + " | ".join(f"{m} views" for m in lengths) + " |"
    lines = [header, "|" + "---|" * (2 + len(lengths))]
    cells: dict[tuple, dict[int, Summary]] = {}
    for s in summary:
        cells.setdefault((s.strategy, s.fusion), {})[s.length] = s
    for (strategy, fusion), by_len in cells.items():
        vals = [f"{100 * by_len[m].mean:.1f} ± {100 * by_len[m].std:.1f}" if m in by_len else "" for m in lengths]
        lines.append(f"| {strategy} | {fusion} | " + " | ".join(vals) + " |")
    return "\n".join(lines) + "\n"


def emit_results(table: ResultsTable, path, fmt: str = "csv") -> None:
    """Write per-seed rows (csv) or the seed-averaged table (markdown)."""
    if fmt == "csv":
        text = results_csv(table)
    elif fmt == "summary-csv":
        text = summary_csv(table)
    elif fmt == "markdown":
        text = results_markdown(table)
    else:
        raise ContractViolation(f"unknown format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def parse_results(text: str) -> ResultsTable:
    """Inverse of :func:`results_csv`."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != RESULT_HEADER:
        raise ContractViolation(f"unexpected results header {header}")
    rows = []
    for rec in reader:
        if len(rec) != len(RESULT_HEADER):
            raise ContractViolation(f"bad results row {rec}")
        rows.append(ResultRow(rec[0], rec[1], int(rec[2]), int(rec[3]), int(rec[4]), int(rec[5])))
    return ResultsTable(tuple(rows))


def load_results(path) -> ResultsTable:
    with open(path, encoding="utf-8") as fh:
        return parse_results(fh.read())


# --- episodes ------------------------------------------------------------------

TASKS = ("bench", "ablation", "curve")


def _episode_grid(setup: SeedSetup) -> tuple[np.ndarray, np.ndarray]:
    n_obj, v = setup.cells.shape
    return np.repeat(np.arange(n_obj), v), np.tile(np.arange(v), n_obj)


def _count(pred: np.ndarray, truth: np.ndarray) -> tuple[int, int]:
    return int((pred == truth).sum()), len(truth)


def run_seed(config: BenchConfig, seed: int, tasks: Sequence[str],
             scores: ScoreTable | None = None) -> dict[str, ResultsTable]:
    """Result rows of one seed for each requested task."""
    for t in tasks:
        if t not in TASKS:
            raise ContractViolation(f"unknown task {t!r}")
    setup = setup_seed(config, seed, scores)
    grid = setup.grid
    objects, starts = _episode_grid(setup)
    truth = setup.truth[objects]
    n_obj = setup.cells.shape[0]
    rows: dict[str, list[ResultRow]] = {t: [] for t in tasks}
    weighted_label = f"{config.fusion}-weighted"

    def final_labels(paths: np.ndarray, fusion: str) -> np.ndarray:
        if fusion == "all-weighted":
            return prefix_predictions(grid, setup.logliks, objects, paths, setup.weights)[:, -1]
        if fusion == "all-unweighted":
            return prefix_predictions(grid, setup.logliks, objects, paths, None)[:, -1]
        if fusion == "vote":
            return vote_prefix_predictions(setup.logliks, objects, paths)[:, -1]
        weighted = fusion == "best-weighted"
        return best_pair_predictions(grid, setup.logliks, objects, paths, setup.weights, weighted)

    long_m = config.max_length
    if "ablation" in tasks:
        long_m = max(long_m, config.ablation_length)
    cache: dict[str, np.ndarray] = {}

    def long_paths(strategy: str) -> np.ndarray:
        # every strategy but optimised picks views without regard to the length,
        # so one long run serves every prefix
        if strategy not in cache:
            draws = _episode_draws(seed, strategy, n_obj, grid.n_views, long_m)
            cache[strategy] = run_episodes(grid, setup.cells, objects, starts, strategy, long_m, draws,
                                           setup.planners).paths
        return cache[strategy]

    def paths_for(strategy: str, m: int) -> np.ndarray:
        if strategy != "optimised":
            return long_paths(strategy)[:, :m]
        draws = EpisodeDraws(np.zeros(len(objects), dtype=np.intp), np.zeros((len(objects), m)))
        return run_episodes(grid, setup.cells, objects, starts, strategy, m, draws, setup.planners).paths

    if "bench" in tasks:
        for strategy in config.strategies:
            for m in config.lengths:
                paths = paths_for(strategy, m)
                rows["bench"].append(ResultRow(strategy, weighted_label, m, seed,
                                               *_count(final_labels(paths, weighted_label), truth)))
                if strategy in VOTE_STRATEGIES:
                    rows["bench"].append(ResultRow(strategy, "vote", m, seed, *_count(final_labels(paths, "vote"), truth)))
    if "ablation" in tasks:
        paths = long_paths("random")[:, : config.ablation_length]
        for fusion in FUSIONS[:4]:
            rows["ablation"].append(ResultRow("random", fusion, config.ablation_length, seed, *_count(final_labels(paths, fusion), truth)))
    if "curve" in tasks:
        m = config.max_length
        for strategy in config.strategies:
            paths = paths_for(strategy, m)
            pred = prefix_predictions(grid, setup.logliks, objects, paths, setup.weights)
            for k in range(m):
                rows["curve"].append(ResultRow(strategy, "curve", k + 1, seed, *_count(pred[:, k], truth)))
    return {t: ResultsTable(tuple(r)) for t, r in rows.items()}


def _run_seed_args(args) -> dict[str, ResultsTable]:
    return run_seed(*args)


def run_tasks(config: BenchConfig, tasks: Sequence[str], scores: ScoreTable | None = None,
              jobs: int = 1) -> dict[str, ResultsTable]:
    """Run ``tasks`` for every configured seed, optionally in worker processes."""
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if scores is not None and scores.grid != config.grid:
        raise ConfigError("score table grid differs from the configured grid")
    args = [(config, s, tuple(tasks), scores) for s in config.seeds]
    if jobs == 1 or len(args) == 1:
        parts = [_run_seed_args(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
            parts = list(pool.map(_run_seed_args, args))
    return {t: ResultsTable(tuple(r for p in parts for r in p[t].rows)) for t in tasks}


def run_benchmark(config: BenchConfig, scores: ScoreTable | None = None, jobs: int = 1) -> ResultsTable:
    """Accuracy per (strategy, fusion, length, seed) at the configured lengths."""
    return run_tasks(config, ("bench",), scores, jobs)["bench"]


def ablation_table(config: BenchConfig, scores: ScoreTable | None = None, jobs: int = 1) -> ResultsTable:
    """All/Best x weighted/unweighted fusion on shared random paths."""
    return run_tasks(config, ("ablation",), scores, jobs)["ablation"]


def accuracy_curve(config: BenchConfig, scores: ScoreTable | None = None, jobs: int = 1) -> ResultsTable:
    """Accuracy after 1..max(lengths) views; rows use fusion label ``curve``."""
    return run_tasks(config, ("curve",), scores, jobs)["curve"]


def curve_series(table: ResultsTable) -> dict[str, list[float]]:
    """Seed-averaged accuracy per prefix length for each strategy."""
    out: dict[str, list[float]] = {}
    for s in table.summary():
        if s.fusion == "curve":
            out.setdefault(s.strategy, []).append(s.mean)
    return out


# --- golden files --------------------------------------------------------------

GOLDEN_PATH = FilePath(__file__).parent / "data" / "golden_summary.csv"


def golden_diff(actual: str, expected: str) -> list[str]:
    """Lines that differ between two summary CSV texts (empty when identical)."""
    a, e = actual.splitlines(), expected.splitlines()
    out = []
    for i in range(max(len(a), len(e))):
        la = a[i] if i < len(a) else "<missing>"
        le = e[i] if i < len(e) else "<missing>"
        if la != le:
            out.append(f"line {i + 1}: expected {le!r}, got {la!r}")
    return out
