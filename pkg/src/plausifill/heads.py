"""Task heads: reusable projection head, filler-span mean pooling, and the
classification / bounded-regression outputs.

The projection head (dense + activation + layer norm over the encoder
states) is trained during pretraining and optionally kept at fine-tuning
time; dropping it removes exactly d^2 + 3d trainable scalars.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, RandomStreams, Tensor
from .errors import InputError

N_CLASSES = 3


@dataclass(frozen=True)
class SpanIndex:
    """Half-open token range [i, j) covering the filler inside a sequence."""

    i: int
    j: int

    def __post_init__(self):
        if self.i < 0 or self.j < 0:
            raise InputError(f"span indices must be non-negative, got [{self.i}, {self.j})")
        if self.i > self.j:
            raise InputError(f"span start {self.i} exceeds end {self.j}")

    def __len__(self):
        return self.j - self.i


class PretrainedHead:
    """Dense layer + activation + layer norm applied to every encoder state."""

    def __init__(self, d_model: int, activation_kind: str, rng: np.random.Generator,
                 name: str = "lm_head"):
        if activation_kind not in ad.ACTIVATION_KINDS:
            from .errors import ConfigError
            raise ConfigError(f"unknown activation kind: {activation_kind!r}")
        self.d_model = d_model
        self.activation_kind = activation_kind
        self.w1 = ad.xavier_param(f"{name}.w1", (d_model, d_model), rng)
        self.b1 = ad.zeros_param(f"{name}.b1", d_model)
        self.ln_g = ad.ones_param(f"{name}.ln.gamma", d_model)
        self.ln_b = ad.zeros_param(f"{name}.ln.beta", d_model)

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.ln_g, self.ln_b]

    def forward(self, h: Tensor) -> Tensor:
        projected = ad.activation(ad.add(ad.matmul(h, self.w1), self.b1), self.activation_kind)
        return ad.layer_norm(projected, self.ln_g, self.ln_b)


def lm_head_forward(h: Tensor, head: PretrainedHead | None) -> Tensor:
    """Apply the reused projection head; with reuse off (head None) this is the identity."""
    if head is None:
        return h
    if h.shape[-1] != head.d_model:
        from .errors import ShapeError
        raise ShapeError(f"encoder width {h.shape[-1]} != head width {head.d_model}")
    return head.forward(h)


def span_pool(states: Tensor, span: SpanIndex) -> Tensor:
    """Mean of the rows in [span.i, span.j); returns a (1, d) tensor."""
    n = states.shape[0]
    if len(span) == 0:
        raise InputError(f"empty span [{span.i}, {span.j})")
    if span.j > n:
        raise InputError(f"span [{span.i}, {span.j}) exceeds sequence length {n}")
    weights = np.zeros((1, n))
    weights[0, span.i:span.j] = 1.0 / len(span)
    return ad.matmul(Tensor(weights), states)


def span_pool_batch(states: Tensor, spans: list[SpanIndex]) -> Tensor:
    """Batched span means: (B, n, d) states + B spans -> (B, d)."""
    b, n, d = states.shape
    if len(spans) != b:
        raise InputError(f"{len(spans)} spans for batch of {b}")
    weights = np.zeros((b, 1, n))
    for row, span in enumerate(spans):
        if len(span) == 0:
            raise InputError(f"empty span [{span.i}, {span.j}) at batch row {row}")
        if span.j > n:
            raise InputError(f"span [{span.i}, {span.j}) exceeds padded length {n}")
        weights[row, 0, span.i:span.j] = 1.0 / len(span)
    pooled = ad.matmul(Tensor(weights), states)
    return ad.reshape(pooled, (b, d))


class TaskHead:
    """Enhancement block plus the 3-class and bounded-score output layers.

    Both output layers always exist; gradients only reach the pair the
    active objective touches.
    """

    def __init__(self, d_model: int, dropout_p: float, streams: RandomStreams,
                 name: str = "task_head"):
        rng = streams.stream(f"init/{name}")
        self.d_model = d_model
        self.dropout_p = dropout_p
        self._streams = streams
        self._name = name
        self.w2 = ad.xavier_param(f"{name}.w2", (d_model, d_model), rng)
        self.b2 = ad.zeros_param(f"{name}.b2", d_model)
        self.w3 = ad.xavier_param(f"{name}.w3", (d_model, N_CLASSES), rng)
        self.b3 = ad.zeros_param(f"{name}.b3", N_CLASSES)
        self.w4 = ad.xavier_param(f"{name}.w4", (d_model, 1), rng)
        self.b4 = ad.zeros_param(f"{name}.b4", 1)

    def parameters(self) -> list[Parameter]:
        return [self.w2, self.b2, self.w3, self.b3, self.w4, self.b4]

    def parameters_for(self, task: str) -> list[Parameter]:
        if task == "classification":
            return [self.w2, self.b2, self.w3, self.b3]
        if task == "regression":
            return [self.w2, self.b2, self.w4, self.b4]
        from .errors import ConfigError
        raise ConfigError(f"unknown task: {task!r}")

    def enhance(self, pooled: Tensor, mode: str) -> Tensor:
        """dropout -> dense -> tanh -> dropout, in exactly that order."""
        inner = ad.dropout(pooled, self.dropout_p, mode,
                           self._streams.stream(f"dropout/{self._name}/in"))
        dense = ad.tanh(ad.add(ad.matmul(inner, self.w2), self.b2))
        return ad.dropout(dense, self.dropout_p, mode,
                          self._streams.stream(f"dropout/{self._name}/out"))

    def classify(self, enhanced: Tensor) -> Tensor:
        """Probability 3-vector per row; argmax is the predicted label."""
        return ad.softmax(ad.add(ad.matmul(enhanced, self.w3), self.b3), axis=-1)

    def regress(self, enhanced: Tensor) -> Tensor:
        """Bounded plausibility score: sigmoid(..) * 4 + 1, strictly inside (1, 5)."""
        raw = ad.sigmoid(ad.add(ad.matmul(enhanced, self.w4), self.b4))
        scaled = ad.add(ad.mul(raw, 4.0), 1.0)
        return ad.reshape(scaled, (enhanced.shape[0],)) if scaled.ndim == 2 else scaled


def lm_head_param_delta(d_model: int) -> int:
    """Trainable scalars added by keeping the projection head: d^2 + 3d."""
    return d_model * d_model + 3 * d_model
