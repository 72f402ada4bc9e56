"""
A small benchmark run
=====================

The same pipeline the ``pairview bench`` command runs, on a reduced
configuration so it finishes in a few seconds.
"""

from pairview.harness import TASKS, BenchConfig, curve_series, results_markdown, run_tasks

config = BenchConfig(num_classes=5, train_per_class=10, test_per_class=4, seeds=(0, 1), lengths=(2, 4, 8),
                     quality_samples=10)
tables = run_tasks(config, TASKS)

print("accuracy by strategy and sequence length")
print(results_markdown(tables["bench"]))
print("fusion ablation on shared random paths")
print(results_markdown(tables["ablation"]))
print("accuracy after each additional view")
for strategy, series in curve_series(tables["curve"]).items():
    print(f"{strategy:>13}: " + " ".join(f"{a:.2f}" for a in series))
