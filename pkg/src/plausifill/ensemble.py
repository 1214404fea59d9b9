"""Prediction aggregation: standard averaging plus pattern-aware ensembling.

Pattern-aware mode ranks every candidate (the individual models and, always,
their standard ensemble) on the dev subset of each pattern, then either
copies the per-pattern winner's test predictions (select_top1) or averages
the top k (mean_topk). For accuracy the per-pattern argmax makes the
combined dev score a size-weighted mean of per-pattern maxima, so it cannot
fall below any single candidate; rank correlation carries no such guarantee
because it does not decompose over a partition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Pattern
from .errors import ConfigError, InputError
from .evaluation import accuracy, spearman

ENSEMBLE_ID = "__ensemble__"
_PROB_COLUMNS = ("p_implausible", "p_neutral", "p_plausible")


class PredictionSet:
    """Per-example predictions from one model: probability triples or scores."""

    def __init__(self, model_id: str, task: str,
                 entries: dict[str, np.ndarray | float],
                 patterns: dict[str, Pattern] | None = None):
        if task not in ("classification", "regression"):
            raise ConfigError(f"unknown task: {task!r}")
        if not entries:
            raise InputError(f"prediction set {model_id!r} is empty")
        self.model_id = model_id
        self.task = task
        self.entries = dict(entries)
        if task == "classification":
            for eid, probs in self.entries.items():
                probs = np.asarray(probs, dtype=np.float64)
                if probs.shape != (3,):
                    raise InputError(f"{model_id}/{eid}: expected 3 probabilities")
                if abs(float(probs.sum()) - 1.0) > 1e-6:
                    raise InputError(f"{model_id}/{eid}: probabilities sum to {probs.sum()}")
                self.entries[eid] = probs
        else:
            self.entries = {eid: float(v) for eid, v in self.entries.items()}
        self.patterns: dict[str, Pattern] | None = None
        if patterns is not None:
            self.attach_patterns(patterns)

    def attach_patterns(self, patterns: dict[str, Pattern]) -> "PredictionSet":
        missing = [eid for eid in self.entries if eid not in patterns]
        if missing:
            raise InputError(
                f"{self.model_id}: {len(missing)} example ids lack a pattern "
                f"(first: {missing[0]})"
            )
        self.patterns = {eid: patterns[eid] for eid in self.entries}
        return self

    def example_ids(self) -> list[str]:
        return sorted(self.entries)

    def predicted_labels(self) -> dict[str, int]:
        if self.task != "classification":
            raise ConfigError("predicted_labels applies to classification sets")
        return {eid: int(np.argmax(p)) for eid, p in self.entries.items()}


def write_predictions_tsv(pset: PredictionSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for eid in pset.example_ids():
            if pset.task == "classification":
                probs = pset.entries[eid]
                fh.write(
                    f"{eid}\t{float(probs[0])!r}\t{float(probs[1])!r}\t{float(probs[2])!r}\n"
                )
            else:
                fh.write(f"{eid}\t{float(pset.entries[eid])!r}\n")


def read_predictions_tsv(path, model_id: str | None = None) -> PredictionSet:
    """Load a prediction file; 4 columns means class probabilities, 2 a score."""
    entries: dict = {}
    task = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) == 4:
                row_task = "classification"
                value = np.array([float(x) for x in parts[1:]])
            elif len(parts) == 2:
                row_task = "regression"
                value = float(parts[1])
            else:
                raise InputError(f"{path}:{lineno}: expected 2 or 4 columns, got {len(parts)}")
            if task is None:
                task = row_task
            elif task != row_task:
                raise InputError(f"{path}:{lineno}: mixed column counts")
            if parts[0] in entries:
                raise InputError(f"{path}:{lineno}: duplicate example id {parts[0]!r}")
            entries[parts[0]] = value
    if task is None:
        raise InputError(f"{path}: no predictions found")
    if model_id is None:
        import os
        model_id = os.path.splitext(os.path.basename(str(path)))[0]
    return PredictionSet(model_id, task, entries)


def _check_aligned(sets: list[PredictionSet]):
    if not sets:
        raise InputError("need at least one prediction set")
    base_ids = set(sets[0].entries)
    task = sets[0].task
    for pset in sets[1:]:
        if pset.task != task:
            raise InputError(f"task mismatch: {pset.model_id} is {pset.task}, expected {task}")
        ids = set(pset.entries)
        if ids != base_ids:
            diff = sorted(ids.symmetric_difference(base_ids))[:3]
            raise InputError(
                f"id mismatch between {sets[0].model_id} and {pset.model_id} "
                f"(first differing: {diff})"
            )
    return task, base_ids


def standard_ensemble(sets: list[PredictionSet], model_id: str = ENSEMBLE_ID) -> PredictionSet:
    """Mean of probability vectors (renormalized) or mean of scores."""
    task, ids = _check_aligned(sets)
    entries: dict = {}
    for eid in ids:
        if task == "classification":
            mean = np.mean([pset.entries[eid] for pset in sets], axis=0)
            entries[eid] = mean / mean.sum()
        else:
            entries[eid] = float(np.mean([pset.entries[eid] for pset in sets]))
    out = PredictionSet(model_id, task, entries)
    for pset in sets:
        if pset.patterns is not None:
            out.attach_patterns(pset.patterns)
            break
    return out


def _metric_value(pset: PredictionSet, gold: dict, ids) -> float:
    subset_gold = {eid: gold[eid] for eid in ids}
    if pset.task == "classification":
        predicted = {eid: int(np.argmax(pset.entries[eid])) for eid in ids}
        normalized = {eid: (v.value if hasattr(v, "value") else int(v))
                      for eid, v in subset_gold.items()}
        return accuracy(predicted, normalized)
    return spearman({eid: pset.entries[eid] for eid in ids}, subset_gold)


def score_per_pattern(pset: PredictionSet, gold: dict, metric: str) -> dict[Pattern, float]:
    """Metric value on each pattern subset; empty patterns are absent, not zero."""
    if metric not in ("accuracy", "spearman"):
        raise ConfigError(f"unknown metric: {metric!r}")
    if (metric == "accuracy") != (pset.task == "classification"):
        raise ConfigError(f"metric {metric!r} does not match task {pset.task!r}")
    if pset.patterns is None:
        raise InputError(f"{pset.model_id}: patterns not attached")
    missing = [eid for eid in pset.entries if eid not in gold]
    if missing:
        raise InputError(f"gold is missing {len(missing)} ids (first: {missing[0]})")
    out: dict[Pattern, float] = {}
    for pattern in Pattern:
        ids = [eid for eid in pset.entries if pset.patterns[eid] is pattern]
        if not ids:
            continue
        out[pattern] = _metric_value(pset, gold, ids)
    return out


@dataclass
class PatternRanking:
    pattern: Pattern
    ranked: list[tuple[str, float]]  # (model_id, dev metric), best first
    chosen: list[str]
    tied_with_winner: list[str] = field(default_factory=list)


@dataclass
class PatternEnsembleSpec:
    mode: str
    metric_name: str
    k: int | None
    rankings: dict[Pattern, PatternRanking]

    def to_text(self) -> str:
        lines = [f"pattern-aware ensemble audit (mode={self.mode}, metric={self.metric_name}"
                 + (f", k={self.k}" if self.k is not None else "") + ")"]
        lines.append("ties are broken toward the lexicographically smallest model id")
        for pattern in sorted(self.rankings, key=lambda p: p.value):
            ranking = self.rankings[pattern]
            lines.append("")
            lines.append(f"[{pattern.value}]")
            for rank, (model_id, value) in enumerate(ranking.ranked, start=1):
                marker = "*" if model_id in ranking.chosen else " "
                lines.append(f"  {marker} {rank}. {model_id}  dev {self.metric_name}={value:.6f}")
            if ranking.tied_with_winner:
                lines.append(f"    tie with winner: {', '.join(ranking.tied_with_winner)}")
        return "\n".join(lines) + "\n"


def pattern_aware_ensemble(dev_sets: list[PredictionSet], dev_gold: dict,
                           test_sets: list[PredictionSet], mode: str = "select_top1",
                           k: int | None = None,
                           model_id: str = "pattern_aware") -> tuple[PredictionSet, PatternEnsembleSpec]:
    """Aggregate test predictions separately per pattern, guided by dev metrics.

    The standard ensemble of all models always joins the candidate pool.
    """
    if mode not in ("select_top1", "mean_topk"):
        raise ConfigError(f"unknown mode: {mode!r}")
    task, _ = _check_aligned(dev_sets)
    _check_aligned(test_sets)
    dev_by_id = {pset.model_id: pset for pset in dev_sets}
    test_by_id = {pset.model_id: pset for pset in test_sets}
    if len(dev_by_id) != len(dev_sets) or len(test_by_id) != len(test_sets):
        raise InputError("duplicate model ids in the candidate lists")
    if set(dev_by_id) != set(test_by_id):
        raise InputError("dev and test prediction sets name different models")
    for pset in dev_sets + test_sets:
        if pset.patterns is None:
            raise InputError(f"{pset.model_id}: patterns not attached")

    dev_candidates = dict(dev_by_id)
    test_candidates = dict(test_by_id)
    dev_candidates[ENSEMBLE_ID] = standard_ensemble(dev_sets)
    test_candidates[ENSEMBLE_ID] = standard_ensemble(test_sets)

    if mode == "mean_topk":
        if k is None or k < 1:
            raise ConfigError("mean_topk requires k >= 1")
        if k > len(dev_candidates):
            raise ConfigError(f"k={k} exceeds the {len(dev_candidates)} candidates")

    metric_name = "accuracy" if task == "classification" else "spearman"
    test_patterns: dict[str, Pattern] = {}
    for pset in test_sets:
        test_patterns.update(pset.patterns)

    entries: dict = {}
    rankings: dict[Pattern, PatternRanking] = {}
    for pattern in Pattern:
        test_ids = [eid for eid, p in test_patterns.items() if p is pattern]
        if not test_ids:
            continue
        any_dev = dev_sets[0]
        dev_ids = [eid for eid, p in any_dev.patterns.items() if p is pattern]
        if not dev_ids:
            raise InputError(f"no dev examples for pattern {pattern.value!r}")
        scored = [
            (cid, _metric_value(cand, dev_gold, dev_ids))
            for cid, cand in dev_candidates.items()
        ]
        scored.sort(key=lambda item: (-item[1], item[0]))
        chosen = [scored[0][0]] if mode == "select_top1" else [cid for cid, _ in scored[:k]]
        tied = [cid for cid, value in scored[1:] if value == scored[0][1]]
        rankings[pattern] = PatternRanking(pattern, scored, chosen, tied)

        if len(chosen) == 1:
            source = test_candidates[chosen[0]]
            for eid in test_ids:
                entries[eid] = source.entries[eid]
        else:
            members = [test_candidates[cid] for cid in chosen]
            merged = standard_ensemble(members, model_id="member_mean")
            for eid in test_ids:
                entries[eid] = merged.entries[eid]

    out = PredictionSet(model_id, task, entries, patterns=test_patterns)
    spec = PatternEnsembleSpec(mode=mode, metric_name=metric_name,
                               k=k if mode == "mean_topk" else None, rankings=rankings)
    return out, spec
