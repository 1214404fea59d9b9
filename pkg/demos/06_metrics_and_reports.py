# The evaluation harness: accuracy, tie-aware rank correlation, per-pattern
# reports, and label distribution tables.

import numpy as np

from plausifill.data import Label, Pattern, SyntheticTaskConfig, generate_synthetic_task
from plausifill.evaluation import (accuracy, distribution_tsv, label_distribution,
                                   per_pattern_report, spearman)

print("accuracy:", accuracy({"a": 2, "b": 0, "c": 1}, {"a": 2, "b": 1, "c": 1}))

# rank correlation handles ties with fractional average ranks
pred = {f"e{i}": v for i, v in enumerate([1.0, 2.0, 2.0, 4.0, 5.0])}
gold = {f"e{i}": v for i, v in enumerate([1.1, 1.9, 3.0, 3.9, 4.8])}
print("spearman with a tie:", round(spearman(pred, gold), 4))

# monotone transforms leave it unchanged
cubed = {k: v ** 3 for k, v in pred.items()}
print("after cubing predictions:", round(spearman(cubed, gold), 4))

# per-pattern report over a random classification outcome
rng = np.random.default_rng(0)
patterns = {f"e{i:02d}": list(Pattern)[i % 4] for i in range(80)}
gold_labels = {eid: int(rng.integers(3)) for eid in patterns}
pred_labels = {eid: (g if rng.random() < 0.7 else int(rng.integers(3)))
               for eid, g in gold_labels.items()}
report = per_pattern_report(pred_labels, gold_labels, patterns, "classification")
print()
print(report.to_text())


class Row:
    def __init__(self, example_id, pattern, label):
        self.example_id, self.pattern, self.label = example_id, pattern, label


# label distribution of a skewed synthetic dataset, plot-ready
task = generate_synthetic_task(
    SyntheticTaskConfig(n_train=200, n_dev=20, n_test=20, seed=1, label_skew=1.0))
rows = [Row(eid, next(i.pattern for i in task.train.instances if eid.startswith(i.id)),
            label)
        for eid, label in list(task.train.labels.items())[:400]]
print(distribution_tsv(label_distribution(rows)))
