"""Toy transformer encoder producing contextual token representations.

Pre-norm residual blocks with learned absolute position embeddings; small
enough that the entire pipeline trains in CPU minutes. Padding is honored
via an additive key mask, so padded positions never receive attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, RandomStreams, Tensor
from .errors import ConfigError, InputError

MASK_BIAS = -1e9


@dataclass(frozen=True)
class BackboneConfig:
    vocab_size: int = 512
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_seq_len: int = 128
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.vocab_size < 8:
            raise ConfigError("vocab_size must be >= 8")
        if self.max_seq_len < 2:
            raise ConfigError("max_seq_len must be >= 2")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "max_seq_len": self.max_seq_len,
            "dropout_p": self.dropout_p,
        }


def param_count(config: BackboneConfig) -> int:
    """Exact number of learnable scalars in an Encoder built from config."""
    d, ff = config.d_model, config.d_ff
    per_layer = (
        2 * d              # first layer norm
        + 4 * (d * d + d)  # q, k, v, o projections with biases
        + 2 * d            # second layer norm
        + d * ff + ff      # ffn expand
        + ff * d + d       # ffn contract
    )
    return (
        config.vocab_size * d
        + config.max_seq_len * d
        + config.n_layers * per_layer
        + 2 * d            # final layer norm
    )


class Encoder:
    """Transformer encoder: token ids -> one contextual row per token."""

    def __init__(self, config: BackboneConfig, seed: int, name: str = "backbone"):
        self.config = config
        self.name = name
        self._streams = RandomStreams(seed)
        rng = self._streams.stream("init")
        d, ff = config.d_model, config.d_ff

        self.tok_emb = ad.normal_param(f"{name}.tok_emb", (config.vocab_size, d), rng)
        self.pos_emb = ad.normal_param(f"{name}.pos_emb", (config.max_seq_len, d), rng)
        self.layers = []
        for i in range(config.n_layers):
            prefix = f"{name}.layer{i}"
            layer = {
                "ln1_g": ad.ones_param(f"{prefix}.ln1.gamma", d),
                "ln1_b": ad.zeros_param(f"{prefix}.ln1.beta", d),
                "wq": ad.xavier_param(f"{prefix}.wq", (d, d), rng),
                "bq": ad.zeros_param(f"{prefix}.bq", d),
                "wk": ad.xavier_param(f"{prefix}.wk", (d, d), rng),
                "bk": ad.zeros_param(f"{prefix}.bk", d),
                "wv": ad.xavier_param(f"{prefix}.wv", (d, d), rng),
                "bv": ad.zeros_param(f"{prefix}.bv", d),
                "wo": ad.xavier_param(f"{prefix}.wo", (d, d), rng),
                "bo": ad.zeros_param(f"{prefix}.bo", d),
                "ln2_g": ad.ones_param(f"{prefix}.ln2.gamma", d),
                "ln2_b": ad.zeros_param(f"{prefix}.ln2.beta", d),
                "w_ff1": ad.xavier_param(f"{prefix}.ffn.w1", (d, ff), rng),
                "b_ff1": ad.zeros_param(f"{prefix}.ffn.b1", ff),
                "w_ff2": ad.xavier_param(f"{prefix}.ffn.w2", (ff, d), rng),
                "b_ff2": ad.zeros_param(f"{prefix}.ffn.b2", d),
            }
            self.layers.append(layer)
        self.ln_f_g = ad.ones_param(f"{name}.ln_f.gamma", d)
        self.ln_f_b = ad.zeros_param(f"{name}.ln_f.beta", d)

    def parameters(self) -> list[Parameter]:
        params = [self.tok_emb, self.pos_emb]
        for layer in self.layers:
            params.extend(layer.values())
        params.extend([self.ln_f_g, self.ln_f_b])
        return params

    def _validate_ids(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        if not np.issubdtype(ids.dtype, np.integer):
            raise InputError("token ids must be integers")
        n = ids.shape[-1]
        if n < 1 or n > self.config.max_seq_len:
            raise InputError(
                f"sequence length {n} outside [1, {self.config.max_seq_len}]; caller truncates"
            )
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise InputError(
                f"token id out of range [0, {self.config.vocab_size}): "
                f"min={ids.min()}, max={ids.max()}"
            )
        return ids

    def encode(self, token_ids, mode: str = "eval", collect_attn=None) -> Tensor:
        """Encode a single sequence; returns a (n, d_model) tensor."""
        ids = self._validate_ids(np.asarray(token_ids))
        if ids.ndim != 1:
            raise InputError("encode expects a 1-d id sequence; use encode_batch for batches")
        out = self.encode_batch(ids[None, :], None, mode=mode, collect_attn=collect_attn)
        return ad.reshape(out, (ids.shape[0], self.config.d_model))

    def encode_batch(
        self,
        ids: np.ndarray,
        pad_mask: np.ndarray | None,
        mode: str = "eval",
        collect_attn=None,
    ) -> Tensor:
        """Encode a (B, n) id batch; pad_mask is 1.0 at real tokens, 0.0 at padding."""
        ids = self._validate_ids(np.asarray(ids))
        if ids.ndim != 2:
            raise InputError("encode_batch expects a (batch, length) id array")
        cfg = self.config
        n = ids.shape[1]

        h = ad.add(ad.embedding(self.tok_emb, ids), ad.slice_first(self.pos_emb, 0, n))
        h = ad.dropout(h, cfg.dropout_p, mode, self._streams.stream("dropout/embed"))

        if pad_mask is None:
            key_bias = None
        else:
            pad_mask = np.asarray(pad_mask, dtype=np.float64)
            key_bias = ((1.0 - pad_mask) * MASK_BIAS)[:, None, :]  # (B, 1, n)

        d_head = cfg.d_model // cfg.n_heads
        scale = 1.0 / np.sqrt(d_head)
        for i, layer in enumerate(self.layers):
            x = ad.layer_norm(h, layer["ln1_g"], layer["ln1_b"])
            q = ad.add(ad.matmul(x, layer["wq"]), layer["bq"])
            k = ad.add(ad.matmul(x, layer["wk"]), layer["bk"])
            v = ad.add(ad.matmul(x, layer["wv"]), layer["bv"])
            head_outs = []
            for hd in range(cfg.n_heads):
                lo, hi = hd * d_head, (hd + 1) * d_head
                qh = ad.slice_last(q, lo, hi)
                kh = ad.slice_last(k, lo, hi)
                vh = ad.slice_last(v, lo, hi)
                scores = ad.mul(ad.matmul(qh, ad.swap_last_axes(kh)), scale)
                if key_bias is not None:
                    scores = ad.add(scores, key_bias)
                attn = ad.softmax(scores, axis=-1)
                if collect_attn is not None:
                    collect_attn.append(attn.data.copy())
                head_outs.append(ad.matmul(attn, vh))
            o = ad.add(ad.matmul(ad.concat_last(head_outs), layer["wo"]), layer["bo"])
            o = ad.dropout(o, cfg.dropout_p, mode, self._streams.stream(f"dropout/attn{i}"))
            h = ad.add(h, o)

            x = ad.layer_norm(h, layer["ln2_g"], layer["ln2_b"])
            f = ad.gelu(ad.add(ad.matmul(x, layer["w_ff1"]), layer["b_ff1"]))
            f = ad.add(ad.matmul(f, layer["w_ff2"]), layer["b_ff2"])
            f = ad.dropout(f, cfg.dropout_p, mode, self._streams.stream(f"dropout/ffn{i}"))
            h = ad.add(h, f)

        return ad.layer_norm(h, self.ln_f_g, self.ln_f_b)
