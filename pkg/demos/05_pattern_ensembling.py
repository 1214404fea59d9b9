# Pattern-aware ensembling: different models win different pattern subsets,
# so selecting per pattern on dev beats any single candidate.

import numpy as np

from plausifill.data import Pattern
from plausifill.ensemble import (PredictionSet, pattern_aware_ensemble,
                                 score_per_pattern, standard_ensemble)
from plausifill.evaluation import accuracy

rng = np.random.default_rng(0)
patterns = {f"e{i:03d}": list(Pattern)[i % 4] for i in range(400)}
gold = {eid: int(rng.integers(3)) for eid in patterns}


def biased_model(model_id, strong_patterns, p_correct=0.9, p_weak=0.45):
    entries = {}
    for eid, pattern in patterns.items():
        p = p_correct if pattern in strong_patterns else p_weak
        label = gold[eid] if rng.random() < p else int(rng.integers(3))
        probs = np.full(3, 0.05)
        probs[label] = 0.9
        entries[eid] = probs
    return PredictionSet(model_id, "classification", entries, patterns)


models = [
    biased_model("heads-spec", {Pattern.FUSED_HEAD, Pattern.METONYMIC_REFERENCE}),
    biased_model("compound-spec", {Pattern.ADDED_COMPOUND}),
    biased_model("reference-spec", {Pattern.IMPLICIT_REFERENCE}),
]

for pset in models:
    per = score_per_pattern(pset, gold, "accuracy")
    summary = {p.value.split()[0]: round(v, 2) for p, v in per.items()}
    print(f"{pset.model_id:<15} overall {accuracy(pset.predicted_labels(), gold):.3f} {summary}")

plain = standard_ensemble(models)
print(f"{'mean ensemble':<15} overall {accuracy(plain.predicted_labels(), gold):.3f}")

combined, spec = pattern_aware_ensemble(models, gold, models, mode="select_top1")
print(f"{'pattern-aware':<15} overall {accuracy(combined.predicted_labels(), gold):.3f}")
print()
print(spec.to_text())
