"""plausifill: cloze-filler plausibility classification and ranking at desk scale.

A numpy-only library covering the full pipeline: a small autodiff engine, a
toy transformer encoder, replaced-token-detection pretraining on a synthetic
corpus, span-pooled classification/regression heads, AdamW fine-tuning,
pattern-aware ensembling, and the evaluation harness.
"""

__version__ = "0.1.0"

from .autodiff import Parameter, RandomStreams, Tensor, backward, no_grad

__all__ = ["Parameter", "RandomStreams", "Tensor", "backward", "no_grad", "__version__"]
