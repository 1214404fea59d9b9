"""Official task metrics: label accuracy and Spearman's rank correlation with
fractional average ranks for ties, plus per-pattern breakdowns and label
distribution statistics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Label, Pattern
from .errors import InputError, NumericError


def _check_same_ids(pred: dict, gold: dict) -> list[str]:
    if pred.keys() != gold.keys():
        only_pred = sorted(set(pred) - set(gold))[:3]
        only_gold = sorted(set(gold) - set(pred))[:3]
        raise InputError(
            f"id sets differ: {len(pred)} predicted vs {len(gold)} gold "
            f"(pred-only {only_pred}, gold-only {only_gold})"
        )
    return sorted(pred)


def accuracy(predicted: dict, gold: dict) -> float:
    """Fraction of exact label matches over a shared id set."""
    ids = _check_same_ids(predicted, gold)
    if not ids:
        raise InputError("accuracy of an empty id set is undefined")
    hits = sum(1 for i in ids if predicted[i] == gold[i])
    return hits / len(ids)


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def tie_count(values: np.ndarray) -> int:
    """Number of items that share their value with at least one other item."""
    _, counts = np.unique(np.asarray(values), return_counts=True)
    return int(counts[counts > 1].sum())


def spearman(pred_scores: dict, gold_scores: dict) -> float:
    """Pearson correlation of the two fractional-rank vectors.

    A constant input has no defined ranking: that is a reported error, never
    a silent zero, because silent zeros would corrupt ensemble selection.
    """
    ids = _check_same_ids(pred_scores, gold_scores)
    if len(ids) < 2:
        raise InputError(f"spearman needs at least 2 items, got {len(ids)}")
    pred = average_ranks(np.array([pred_scores[i] for i in ids]))
    gold = average_ranks(np.array([gold_scores[i] for i in ids]))
    pred_c = pred - pred.mean()
    gold_c = gold - gold.mean()
    denom = np.sqrt((pred_c ** 2).sum() * (gold_c ** 2).sum())
    if denom == 0.0:
        raise NumericError("undefined correlation: a rank vector has zero variance")
    return float((pred_c * gold_c).sum() / denom)


@dataclass
class MetricReport:
    task: str
    metric_name: str
    overall: float
    n: int
    per_pattern: dict[Pattern, float] = field(default_factory=dict)
    n_per_pattern: dict[Pattern, int] = field(default_factory=dict)
    ties: int = 0

    def to_tsv(self) -> str:
        lines = ["subset\tn\t" + self.metric_name]
        lines.append(f"overall\t{self.n}\t{self.overall!r}")
        for pattern in sorted(self.per_pattern, key=lambda p: p.value):
            lines.append(
                f"{pattern.value}\t{self.n_per_pattern[pattern]}\t{self.per_pattern[pattern]!r}"
            )
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max([len("overall")] + [len(p.value) for p in self.per_pattern])
        lines = [f"{'subset'.ljust(width)}  {'n':>6}  {self.metric_name}"]
        lines.append(f"{'overall'.ljust(width)}  {self.n:>6}  {self.overall:.4f}")
        for pattern in sorted(self.per_pattern, key=lambda p: p.value):
            lines.append(
                f"{pattern.value.ljust(width)}  {self.n_per_pattern[pattern]:>6}  "
                f"{self.per_pattern[pattern]:.4f}"
            )
        if self.metric_name == "spearman":
            lines.append("")
            lines.append(f"ties: {self.ties} items share a value with another item")
            lines.append("note: ties receive fractional average ranks")
        return "\n".join(lines) + "\n"


def per_pattern_report(pred: dict, gold: dict, patterns: dict[str, Pattern],
                       task: str) -> MetricReport:
    """Overall plus per-pattern metric values; subset errors propagate."""
    ids = _check_same_ids(pred, gold)
    missing = [i for i in ids if i not in patterns]
    if missing:
        raise InputError(f"{len(missing)} ids lack a pattern (first: {missing[0]})")
    metric = accuracy if task == "classification" else spearman
    report = MetricReport(
        task=task,
        metric_name="accuracy" if task == "classification" else "spearman",
        overall=metric(pred, gold),
        n=len(ids),
    )
    if task == "regression":
        report.ties = tie_count(np.array([pred[i] for i in ids])) + tie_count(
            np.array([gold[i] for i in ids])
        )
    for pattern in Pattern:
        subset = [i for i in ids if patterns[i] is pattern]
        if not subset:
            continue
        report.per_pattern[pattern] = metric(
            {i: pred[i] for i in subset}, {i: gold[i] for i in subset}
        )
        report.n_per_pattern[pattern] = len(subset)
    return report


def label_distribution(examples) -> dict[Pattern, dict[Label, int]]:
    """Exact per-pattern label counts (plot-ready via distribution_tsv)."""
    counts: dict[Pattern, dict[Label, int]] = {
        p: {label: 0 for label in Label} for p in Pattern
    }
    for ex in examples:
        if ex.label is None:
            raise InputError(f"example {ex.example_id} has no label")
        counts[ex.pattern][ex.label] += 1
    return counts


def distribution_tsv(counts: dict[Pattern, dict[Label, int]]) -> str:
    lines = ["pattern\tlabel\tcount"]
    for pattern in sorted(counts, key=lambda p: p.value):
        for label in Label:
            lines.append(f"{pattern.value}\t{label.name}\t{counts[pattern][label]}")
    return "\n".join(lines) + "\n"
