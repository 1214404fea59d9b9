"""Shared test oracles: finite differences, rank/correlation by definition,
and the differentiable-op case table used by both the unit gradient checks
and the acceptance gradient suite."""

import numpy as np


def op_gradient_cases():
    """(name, shape builder, graph builder) for every differentiable op."""
    from plausifill import autodiff as ad
    from plausifill.autodiff import Tensor

    def unary(op):
        def build(tensors):
            return ad.mul(op(tensors[0]), 2.0).sum()
        return build

    def softmax_case(tensors):
        return ad.mul(ad.softmax(tensors[0], axis=-1),
                      Tensor(np.arange(12.0).reshape(3, 4))).sum()

    def matmul_case(tensors):
        return ad.tanh(ad.matmul(tensors[0], tensors[1])).sum()

    def layer_norm_case(tensors):
        return ad.mul(ad.layer_norm(tensors[0], tensors[1], tensors[2]), 1.5).sum()

    def add_mul_case(tensors):
        return ad.mul(ad.add(tensors[0], tensors[1]), tensors[0]).sum()

    def log_exp_case(tensors):
        return ad.log(ad.add(ad.exp(tensors[0]), 1.0)).sum()

    def slice_concat_case(tensors):
        parts = [ad.slice_last(tensors[0], 0, 2), ad.slice_last(tensors[0], 2, 4)]
        return ad.mul(ad.concat_last(parts), 3.0).sum()

    def clamp_case(tensors):
        return ad.clamp_min(tensors[0], 0.1).sum()

    def dropout_case(tensors):
        return ad.dropout(tensors[0], 0.4, "train", np.random.default_rng(1234)).sum()

    return [
        ("tanh", (lambda: [(3, 4)]), unary(ad.tanh)),
        ("sigmoid", (lambda: [(3, 4)]), unary(ad.sigmoid)),
        ("gelu", (lambda: [(3, 4)]), unary(ad.gelu)),
        ("softmax", (lambda: [(3, 4)]), softmax_case),
        ("matmul", (lambda: [(3, 4), (4, 2)]), matmul_case),
        ("layer_norm", (lambda: [(3, 4), (4,), (4,)]), layer_norm_case),
        ("add_mul", (lambda: [(3, 4), (4,)]), add_mul_case),
        ("log_exp", (lambda: [(3, 4)]), log_exp_case),
        ("slice_concat", (lambda: [(3, 4)]), slice_concat_case),
        ("clamp_min", (lambda: [(3, 4)]), clamp_case),
        ("dropout", (lambda: [(3, 4)]), dropout_case),
    ]


def finite_difference(loss_fn, arrays, h=1e-5, coords=None, rng=None):
    """Central-difference gradients of ``loss_fn(arrays) -> float``.

    Returns one array per input with d loss / d coordinate at every checked
    coordinate (unchecked coordinates are left as nan when sampling).
    ``coords``: number of coordinates to sample per array (None = all).
    """
    grads = []
    for idx, base in enumerate(arrays):
        flat = base.reshape(-1)
        if coords is None or coords >= flat.size:
            picked = np.arange(flat.size)
        else:
            picked = rng.choice(flat.size, size=coords, replace=False)
        g = np.full(flat.size, np.nan)
        for c in picked:
            orig = flat[c]
            flat[c] = orig + h
            up = loss_fn(arrays)
            flat[c] = orig - h
            down = loss_fn(arrays)
            flat[c] = orig
            g[c] = (up - down) / (2.0 * h)
        grads.append(g.reshape(base.shape))
    return grads


def relative_grad_error(analytic, numeric):
    """max over checked coordinates of |analytic - numeric| / max(1, |analytic|)."""
    mask = ~np.isnan(numeric)
    if not mask.any():
        return 0.0
    a = analytic[mask]
    n = numeric[mask]
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(a))))


def average_ranks_by_definition(values):
    """Fractional ranks: each value gets the mean 1-based position of its ties."""
    values = list(values)
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def pearson_by_summation(xs, ys):
    """Pearson correlation via direct summation loops (no numpy vector ops)."""
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sxx = syy = 0.0
    for x, y in zip(xs, ys):
        sxy += (x - mx) * (y - my)
        sxx += (x - mx) ** 2
        syy += (y - my) ** 2
    return sxy / (sxx ** 0.5 * syy ** 0.5)


def spearman_by_definition(pred, gold):
    """Definitional Spearman: average ranks then Pearson by summation."""
    return pearson_by_summation(
        average_ranks_by_definition(pred), average_ranks_by_definition(gold)
    )


# Dev accuracies (percent) of four fine-tuning variants on each pattern
# subset, 625 examples per pattern. The per-pattern winners differ, which is
# exactly the situation pattern-aware selection exists for.
GRID_VARIANT_PATTERN_ACCURACY = {
    "LR:1e-05, BSZ:32": {
        "IMPLICIT REFERENCE": 65.12, "METONYMIC REFERENCE": 67.36,
        "FUSED HEAD": 67.68, "ADDED COMPOUND": 64.64,
    },
    "LR:9e-06, BSZ:32": {
        "IMPLICIT REFERENCE": 64.96, "METONYMIC REFERENCE": 69.60,
        "FUSED HEAD": 71.84, "ADDED COMPOUND": 63.20,
    },
    "LR:1e-05, BSZ:64": {
        "IMPLICIT REFERENCE": 71.84, "METONYMIC REFERENCE": 69.28,
        "FUSED HEAD": 65.12, "ADDED COMPOUND": 68.96,
    },
    "LR:9e-06, BSZ:64": {
        "IMPLICIT REFERENCE": 72.32, "METONYMIC REFERENCE": 69.60,
        "FUSED HEAD": 64.96, "ADDED COMPOUND": 69.28,
    },
}


def per_pattern_accuracy_fixture(table=None, n_per_pattern=625):
    """Prediction sets whose per-pattern accuracies match the table exactly.

    Model m is correct on a prefix of each pattern's examples; wrong models
    agree on one confident wrong label so the averaged ensemble never beats
    the per-pattern winner. Returns (sets, gold ints, patterns).
    """
    from plausifill.data import Pattern
    from plausifill.ensemble import PredictionSet

    table = table or GRID_VARIANT_PATTERN_ACCURACY
    gold, patterns = {}, {}
    for pattern in Pattern:
        for i in range(n_per_pattern):
            eid = f"{pattern.name}_{i:04d}"
            gold[eid] = i % 3
            patterns[eid] = pattern

    sets = []
    for model_id, accs in table.items():
        entries = {}
        for pattern in Pattern:
            n_correct = round(accs[pattern.value] / 100.0 * n_per_pattern)
            assert abs(n_correct - accs[pattern.value] / 100.0 * n_per_pattern) < 1e-9
            for i in range(n_per_pattern):
                eid = f"{pattern.name}_{i:04d}"
                g = gold[eid]
                if i < n_correct:
                    probs = np.full(3, 0.01)
                    probs[g] = 0.98
                else:
                    probs = np.full(3, 0.0075)
                    probs[(g + 1) % 3] = 0.985
                entries[eid] = probs
        sets.append(PredictionSet(model_id, "classification", entries, patterns))
    return sets, gold, patterns
