"""Replaced-token-detection pretraining on a synthetic corpus.

A small masked-language generator proposes replacements for masked
positions; the discriminator (backbone + projection head + binary head)
labels every token of the corrupted sequence as original or replaced.
Sampled token ids are plain integers, so no gradient ever flows from the
discriminator into the generator. The generator trains jointly on its own
masked-prediction loss.

Corpus cache format: one token-id sequence per line, space-separated
integers, UTF-8.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, RandomStreams, Tensor
from .backbone import BackboneConfig, Encoder
from .data import FIRST_WORD_ID, MASK_ID, SyntheticGrammar, Vocabulary
from .errors import ConfigError, NumericError
from .heads import PretrainedHead
from .training import (
    AdamWState,
    Checkpoint,
    adamw_step,
    clip_gradients,
    config_hash,
    lr_at,
)

_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    n_sentences: int = 3000
    len_min: int = 6
    len_max: int = 21
    vocab_size: int = 512
    seed: int = 0
    grammar: str = "clause-agreement"

    def __post_init__(self):
        if self.n_sentences < 1:
            raise ConfigError("n_sentences must be >= 1")
        if self.len_min < 6 or self.len_max < max(self.len_min, 7):
            raise ConfigError("need 6 <= len_min <= len_max and len_max >= 7")
        if self.grammar != "clause-agreement":
            raise ConfigError(f"unknown grammar rule set: {self.grammar!r}")


def generate_corpus(config: SyntheticCorpusConfig, grammar: SyntheticGrammar,
                    vocab: Vocabulary) -> list[np.ndarray]:
    """Deterministic clause-structured corpus encoded with the task vocabulary.

    Each sentence uses a per-index seeded stream, so the corpus is identical
    no matter how generation is ordered or parallelized.
    """
    needed = {"the", "now", "."}
    needed.update(w for group in grammar.nouns for w in group)
    needed.update(w for group in grammar.verbs for w in group)
    missing = sorted(w for w in needed if w not in vocab)
    if missing:
        raise ConfigError(
            f"vocabulary too small for grammar: {len(missing)} words missing "
            f"(first: {missing[:3]})"
        )
    if len(vocab) > config.vocab_size:
        raise ConfigError(
            f"vocabulary has {len(vocab)} entries but corpus config allows {config.vocab_size}"
        )
    # clauses span 6-7 tokens, so bound the clause count by the long form
    min_clauses = max(1, math.ceil(config.len_min / 7))
    max_clauses = max(min_clauses, config.len_max // 7)
    sentences = []
    for idx in range(config.n_sentences):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, idx]))
        n_clauses = int(rng.integers(min_clauses, max_clauses + 1))
        words = grammar.corpus_sentence(rng, n_clauses)
        sentences.append(np.array([vocab.encode_token(w) for w in words], dtype=np.int64))
    return sentences


def write_corpus(path, sentences) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sentences:
            fh.write(" ".join(str(int(i)) for i in seq) + "\n")


def read_corpus(path) -> list[np.ndarray]:
    sentences = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                sentences.append(np.array([int(tok) for tok in line.split()], dtype=np.int64))
    return sentences


# -- corruption ---------------------------------------------------------------


@dataclass
class CorruptionResult:
    corrupted_ids: np.ndarray
    original_ids: np.ndarray
    original_flags: np.ndarray  # True wherever corrupted == original
    mask_positions: np.ndarray

    def __post_init__(self):
        if not (len(self.corrupted_ids) == len(self.original_ids) == len(self.original_flags)):
            raise ConfigError("corruption fields must have equal length")


class MlmGenerator:
    """Tiny masked-LM: a 1-layer encoder plus a vocabulary projection.

    Samples replacements only from real word ids: never the reserved block,
    never embedding rows beyond ``sample_limit`` (the actual vocabulary end).
    """

    def __init__(self, vocab_size: int, max_seq_len: int, seed: int,
                 d_model: int = 32, n_layers: int = 1, n_heads: int = 2,
                 d_ff: int = 64, dropout_p: float = 0.0,
                 first_sample_id: int = FIRST_WORD_ID,
                 sample_limit: int | None = None):
        cfg = BackboneConfig(vocab_size=vocab_size, d_model=d_model, n_layers=n_layers,
                             n_heads=n_heads, d_ff=d_ff, max_seq_len=max_seq_len,
                             dropout_p=dropout_p)
        self.config = cfg
        self.encoder = Encoder(cfg, seed=seed, name="generator")
        rng = RandomStreams(seed).stream("init/generator_proj")
        self.proj_w = ad.xavier_param("generator.proj.w", (d_model, vocab_size), rng)
        self.proj_b = ad.zeros_param("generator.proj.b", vocab_size)
        self.first_sample_id = first_sample_id
        self.sample_limit = vocab_size if sample_limit is None else sample_limit
        if not first_sample_id < self.sample_limit <= vocab_size:
            raise ConfigError(
                f"sample_limit must lie in ({first_sample_id}, {vocab_size}]"
            )

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + [self.proj_w, self.proj_b]

    def logits_batch(self, ids: np.ndarray, pad_mask, mode: str) -> Tensor:
        states = self.encoder.encode_batch(ids, pad_mask, mode=mode)
        return ad.add(ad.matmul(states, self.proj_w), self.proj_b)

    def sample_batch(self, ids: np.ndarray, mask_bool: np.ndarray, pad_mask,
                     rng: np.random.Generator, mode: str = "eval"):
        """Replace masked positions with Gumbel-max samples from the MLM.

        Returns (corrupted ids, logits tensor over the masked input); sampled
        ids are detached integers, so discriminator gradients stop here.
        """
        masked_input = np.where(mask_bool, MASK_ID, ids)
        logits = self.logits_batch(masked_input, pad_mask, mode)
        scores = logits.data.copy()
        scores[..., : self.first_sample_id] = -1e30
        scores[..., self.sample_limit:] = -1e30
        scores += rng.gumbel(size=scores.shape)
        sampled = scores.argmax(axis=-1)
        return np.where(mask_bool, sampled, ids).astype(np.int64), logits

    def sample(self, ids: np.ndarray, positions: np.ndarray,
               rng: np.random.Generator) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        mask_bool = np.zeros(len(ids), dtype=bool)
        mask_bool[positions] = True
        corrupted, _ = self.sample_batch(ids[None, :], mask_bool[None, :], None, rng)
        return corrupted[0, positions]


class UniformGenerator:
    """Replacement sampler that ignores context; useful as a null baseline."""

    def __init__(self, vocab_size: int, first_sample_id: int = FIRST_WORD_ID):
        self.vocab_size = vocab_size
        self.first_sample_id = first_sample_id

    def sample(self, ids, positions, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(self.first_sample_id, self.vocab_size, size=len(positions))


def corrupt(x, mask_rate: float, generator, rng: np.random.Generator) -> CorruptionResult:
    """Select ceil(mask_rate * n) positions and replace them with generator samples."""
    if not 0.0 <= mask_rate < 1.0:
        raise ConfigError(f"mask_rate must be in [0, 1), got {mask_rate}")
    x = np.asarray(x, dtype=np.int64)
    n = len(x)
    n_mask = math.ceil(mask_rate * n)
    if n_mask:
        positions = np.sort(rng.choice(n, size=n_mask, replace=False))
        replacements = np.asarray(generator.sample(x, positions, rng), dtype=np.int64)
        corrupted = x.copy()
        corrupted[positions] = replacements
    else:
        positions = np.array([], dtype=np.int64)
        corrupted = x.copy()
    return CorruptionResult(
        corrupted_ids=corrupted,
        original_ids=x.copy(),
        original_flags=corrupted == x,
        mask_positions=positions,
    )


def rtd_loss(per_token_probs: Tensor, flags, weights=None) -> Tensor:
    """Sum over tokens of -log(probability assigned to the true flag).

    ``per_token_probs`` is the predicted probability that each token is
    original; equals binary cross-entropy with the flags as labels.
    """
    if np.any(per_token_probs.data <= 0.0) or np.any(per_token_probs.data >= 1.0):
        raise NumericError("per-token probabilities must lie strictly in (0, 1)")
    flags_f = np.asarray(flags, dtype=np.float64)
    p_true = ad.add(
        ad.mul(per_token_probs, flags_f),
        ad.mul(ad.add(ad.mul(per_token_probs, -1.0), 1.0), 1.0 - flags_f),
    )
    ll = ad.log(ad.clamp_min(p_true, _PROB_FLOOR))
    if weights is not None:
        ll = ad.mul(ll, np.asarray(weights, dtype=np.float64))
    return ad.mul(ll.sum(), -1.0)


# -- discriminator and pretraining ---------------------------------------------


class RtdDiscriminator:
    """Backbone encoder -> projection head -> per-token original/replaced score."""

    def __init__(self, encoder: Encoder, activation: str, seed: int):
        self.encoder = encoder
        streams = RandomStreams(seed)
        d = encoder.config.d_model
        self.lm_head = PretrainedHead(d, activation, streams.stream("init/lm_head"))
        self.rtd_w = ad.xavier_param("rtd_head.w", (d, 1), streams.stream("init/rtd_head"))
        self.rtd_b = ad.zeros_param("rtd_head.b", 1)

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.lm_head.parameters() + [self.rtd_w, self.rtd_b]

    def original_probs(self, ids: np.ndarray, pad_mask, mode: str) -> Tensor:
        states = self.lm_head.forward(self.encoder.encode_batch(ids, pad_mask, mode=mode))
        logits = ad.add(ad.matmul(states, self.rtd_w), self.rtd_b)
        return ad.reshape(ad.sigmoid(logits), ids.shape)


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 1500
    batch_size: int = 32
    learning_rate: float = 1e-3
    warmup_ratio: float = 0.1
    mask_rate: float = 0.15
    seed: int = 0
    activation: str = "gelu"
    weight_decay: float = 0.01
    clip_norm: float | None = 1.0
    holdout_fraction: float = 0.1
    rtd_loss_weight: float = 1.0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if not 0.0 <= self.mask_rate < 1.0:
            raise ConfigError("mask_rate must be in [0, 1)")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must be in (0, 1)")
        if self.activation not in ad.ACTIVATION_KINDS:
            raise ConfigError(f"unknown activation: {self.activation!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class RtdEvaluation:
    accuracy: float
    loss_sum: float
    majority_bound: float
    n_tokens: int
    true_flag_fraction: float


@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    step_log: list[tuple[int, float, float, float, float]]  # step, lr, total, mlm, rtd
    eval_before: RtdEvaluation
    eval_after: RtdEvaluation


def _pad_sequences(seqs: list[np.ndarray]):
    max_len = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), max_len), dtype=np.int64)
    mask = np.zeros((len(seqs), max_len))
    for row, seq in enumerate(seqs):
        ids[row, : len(seq)] = seq
        mask[row, : len(seq)] = 1.0
    return ids, mask


def _mask_batch(pad_mask: np.ndarray, mask_rate: float, rng) -> np.ndarray:
    """Per row, pick ceil(mask_rate * real_len) real positions."""
    mask_bool = np.zeros(pad_mask.shape, dtype=bool)
    for row in range(pad_mask.shape[0]):
        real = int(pad_mask[row].sum())
        n_mask = math.ceil(mask_rate * real)
        if n_mask:
            mask_bool[row, rng.choice(real, size=n_mask, replace=False)] = True
    return mask_bool


def _mlm_loss(logits: Tensor, original_ids: np.ndarray, mask_bool: np.ndarray) -> Tensor:
    probs = ad.softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape)
    rows, cols = np.nonzero(mask_bool)
    onehot[rows, cols, original_ids[rows, cols]] = 1.0
    gold_p = ad.tensor_sum(ad.mul(probs, onehot), axis=-1)  # (B, n), zero off-mask
    picked = ad.mul(
        ad.log(ad.clamp_min(gold_p, _PROB_FLOOR)), mask_bool.astype(np.float64)
    )
    return ad.mul(picked.sum(), -1.0 / max(1, len(rows)))


def evaluate_rtd(disc: RtdDiscriminator, generator: MlmGenerator,
                 sequences: list[np.ndarray], mask_rate: float,
                 rng: np.random.Generator, batch_size: int = 64) -> RtdEvaluation:
    """Held-out token-level accuracy and summed loss, with the constant-predictor bound."""
    correct = total = 0
    loss_sum = 0.0
    true_flags = 0
    with ad.no_grad():
        for start in range(0, len(sequences), batch_size):
            batch = sequences[start:start + batch_size]
            ids, pad_mask = _pad_sequences(batch)
            mask_bool = _mask_batch(pad_mask, mask_rate, rng)
            corrupted, _ = generator.sample_batch(ids, mask_bool, pad_mask, rng, mode="eval")
            flags = corrupted == ids
            probs = disc.original_probs(corrupted, pad_mask, "eval")
            real = pad_mask.astype(bool)
            predicted_original = probs.data >= 0.5
            correct += int(np.sum((predicted_original == flags) & real))
            total += int(real.sum())
            true_flags += int(np.sum(flags & real))
            loss_sum += float(rtd_loss(probs, flags, weights=pad_mask).data)
    q = true_flags / total
    if 0.0 < q < 1.0:
        majority = -total * (q * math.log(q) + (1.0 - q) * math.log(1.0 - q))
    else:
        majority = 0.0
    return RtdEvaluation(
        accuracy=correct / total,
        loss_sum=loss_sum,
        majority_bound=majority,
        n_tokens=total,
        true_flag_fraction=q,
    )


def pretrain(encoder: Encoder, generator: MlmGenerator, corpus: list[np.ndarray],
             config: PretrainConfig) -> PretrainResult:
    """Joint generator/discriminator training; returns the discriminator checkpoint."""
    if len(corpus) < 2:
        raise ConfigError("corpus too small to split off a held-out slice")
    n_holdout = max(1, int(len(corpus) * config.holdout_fraction))
    train_corpus = corpus[:-n_holdout]
    heldout = corpus[-n_holdout:]

    disc = RtdDiscriminator(encoder, config.activation, seed=config.seed)
    disc_params = disc.parameters()
    gen_params = generator.parameters()
    params = disc_params + gen_params
    ad.check_unique_names(params)
    state = AdamWState(weight_decay=config.weight_decay)

    streams = RandomStreams(config.seed)
    batch_rng = streams.stream("batch")
    corrupt_rng = streams.stream("corrupt")
    eval_before = evaluate_rtd(disc, generator, heldout, config.mask_rate,
                               streams.stream("eval/before"))

    step_log = []
    for step in range(config.steps):
        idx = batch_rng.integers(0, len(train_corpus), size=config.batch_size)
        ids, pad_mask = _pad_sequences([train_corpus[i] for i in idx])
        mask_bool = _mask_batch(pad_mask, config.mask_rate, corrupt_rng)
        lr = lr_at(step, config.steps, config)
        try:
            corrupted, gen_logits = generator.sample_batch(
                ids, mask_bool, pad_mask, corrupt_rng, mode="train"
            )
            flags = corrupted == ids
            mlm = _mlm_loss(gen_logits, ids, mask_bool)
            n_real = float(pad_mask.sum())
            rtd = ad.mul(rtd_loss(disc.original_probs(corrupted, pad_mask, "train"),
                                  flags, weights=pad_mask), 1.0 / n_real)
            loss = ad.add(mlm, ad.mul(rtd, config.rtd_loss_weight))
            for p in params:
                p.zero_grad()
            ad.backward(loss)
            if config.clip_norm is not None:
                # clip per model: the generator's early large-vocab loss must
                # not scale the discriminator's gradients down with it
                clip_gradients(disc_params, config.clip_norm)
                clip_gradients(gen_params, config.clip_norm)
            adamw_step(params, state, lr)
        except NumericError as exc:
            raise NumericError(f"pretraining diverged at step {step}: {exc}") from exc
        step_log.append((step, lr, float(loss.data), float(mlm.data), float(rtd.data)))

    eval_after = evaluate_rtd(disc, generator, heldout, config.mask_rate,
                              streams.stream("eval/after"))

    architecture = dict(encoder.config.to_dict())
    architecture["activation"] = config.activation
    checkpoint = Checkpoint(
        kind="rtd-pretrained",
        architecture=architecture,
        params={p.name: p.data.copy() for p in disc.parameters()},
        seed=config.seed,
        config_hash=config_hash(config.to_dict()),
    )
    return PretrainResult(checkpoint, step_log, eval_before, eval_after)
