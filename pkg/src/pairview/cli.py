"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 golden-file
mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .episodes import STRATEGIES
from .errors import ConfigError, ContractViolation, CoverageError, ScoreTableError
from .fusion import learn_weights, save_weights
from .harness import (
    GOLDEN_PATH,
    BenchConfig,
    ResultsTable,
    curve_series,
    emit_results,
    golden_diff,
    run_tasks,
    split_scores,
    stream,
    summary_csv,
    world_tables,
)
from .policy import (
    fit_nbv_policy,
    fit_quality_predictor,
    nbv_policy_from_scores,
    quality_predictor_from_scores,
    save_nbv_policy,
    save_quality_predictor,
)
from .sensorium import load_score_table, save_score_table, save_world

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_GOLDEN = 0, 1, 2, 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors, not argparse's default exit 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON benchmark configuration")
    common.add_argument("--seed", type=int, help="run this seed only")
    common.add_argument("--out", default="results", help="output directory (default: results)")
    common.add_argument("--scores", help="per-view score table CSV to use instead of a synthetic world")
    common.add_argument("--strategies", help=f"comma-separated subset of {','.join(STRATEGIES)}")
    common.add_argument("--lengths", help="comma-separated sequence lengths")
    common.add_argument("--jobs", type=int, default=1, help="worker processes, one seed each")

    p = _Parser(prog="pairview", description="Pairwise multi-view recognition benchmark.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-world", parents=[common], help="write a world and its train/test score tables")
    sub.add_parser("learn-weights", parents=[common], help="learn the pose weight table")
    sub.add_parser("fit-policies", parents=[common], help="fit the next-best-view and pair-quality lookups")
    sub.add_parser("bench", parents=[common], help="accuracy per strategy and sequence length")
    sub.add_parser("ablation", parents=[common], help="all/best x weighted/unweighted fusion on random paths")
    sub.add_parser("curve", parents=[common], help="accuracy after every prefix length")
    g = sub.add_parser("check-golden", parents=[common], help="rerun the benchmark and compare with a golden summary")
    g.add_argument("--golden", help=f"golden summary CSV (default: the packaged {GOLDEN_PATH.name})")
    g.add_argument("--update", action="store_true", help="overwrite the golden file instead of comparing")
    return p


def load_config(args) -> BenchConfig:
    config = BenchConfig.from_json(args.config) if args.config else BenchConfig()
    changes = {}
    if args.seed is not None:
        changes["seeds"] = [args.seed]
    if args.strategies:
        changes["strategies"] = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if args.lengths:
        changes["lengths"] = _int_list(args.lengths)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    return config.replace(**changes) if changes else config


def _write_tables(table: ResultsTable, out: Path, stem: str) -> None:
    emit_results(table, out / f"{stem}.csv", "csv")
    emit_results(table, out / f"{stem}_summary.csv", "summary-csv")
    emit_results(table, out / f"{stem}.md", "markdown")


def _run(args) -> int:
    config = load_config(args)
    scores = load_score_table(args.scores, config.grid) if args.scores else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = config.seeds[0]
    cmd = args.command

    if cmd == "gen-world":
        if scores is not None:
            raise ConfigError("gen-world builds a synthetic world; drop --scores")
        world, train, test, _ = world_tables(config, seed)
        save_world(world, out / "world.json")
        save_score_table(train, out / "train_scores.csv")
        save_score_table(test, out / "test_scores.csv")
        print(f"wrote world seed {seed} to {out}")
        return EXIT_OK

    if cmd in ("learn-weights", "fit-policies"):
        if scores is None:
            world, train, _, _ = world_tables(config, seed)
        else:
            world = None
            train, _ = split_scores(scores, seed, config.train_fraction)
        if cmd == "learn-weights":
            w = learn_weights(train, stream(seed, "weights"), config.samples_per_pose, config.min_samples, config.beta)
            save_weights(w, out / "weights.csv")
            print(f"wrote {len(w.poses)} pose weights to {out / 'weights.csv'}")
        else:
            if world is None:
                nbv, quality = nbv_policy_from_scores(train), quality_predictor_from_scores(train)
            else:
                nbv = fit_nbv_policy(world)
                quality = fit_quality_predictor(world, stream(seed, "quality"), config.quality_samples)
            save_nbv_policy(nbv, out / "nbv_policy.csv", out / "nbv_ranking.csv")
            save_quality_predictor(quality, out / "quality.csv")
            print(f"wrote nbv_policy.csv, nbv_ranking.csv and quality.csv to {out}")
        return EXIT_OK

    if cmd == "check-golden":
        table = run_tasks(config, ("bench",), scores, args.jobs)["bench"]
        actual = summary_csv(table)
        golden = Path(args.golden) if args.golden else GOLDEN_PATH
        if args.update:
            golden.write_text(actual, encoding="utf-8")
            print(f"updated {golden}")
            return EXIT_OK
        try:
            expected = golden.read_text(encoding="utf-8")
        except OSError as exc:
            raise ScoreTableError(f"cannot read golden file: {exc}") from None
        (out / "bench_summary.csv").write_text(actual, encoding="utf-8")
        diff = golden_diff(actual, expected)
        if diff:
            print(f"golden mismatch against {golden}:", file=sys.stderr)
            for line in diff[:20]:
                print("  " + line, file=sys.stderr)
            return EXIT_GOLDEN
        print(f"golden match: {golden}")
        return EXIT_OK

    task = {"bench": "bench", "ablation": "ablation", "curve": "curve"}[cmd]
    table = run_tasks(config, (task,), scores, args.jobs)[task]
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_tables(table, out, task)
    if task == "curve":
        for strategy, series in curve_series(table).items():
            print(f"{strategy:>13}: " + " ".join(f"{a:.3f}" for a in series))
    else:
        sys.stdout.write((out / f"{task}.md").read_text(encoding="utf-8"))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScoreTableError, CoverageError, ContractViolation, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
