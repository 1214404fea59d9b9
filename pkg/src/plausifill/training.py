"""Fine-tuning: batch losses, linear warmup/decay schedule, AdamW with
decoupled weight decay, checkpoint serialization, and the training loop.

Checkpoint file layout: 8-byte magic, u32 little-endian header length, a
UTF-8 JSON header (architecture, parameter table, provenance with a sha256
content hash), then per parameter a u16 name length + name, u64 element
count, and raw little-endian float64 data. Round-trips are byte-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import evaluation
from .autodiff import Parameter, RandomStreams, Tensor
from .backbone import BackboneConfig, Encoder, param_count
from .data import PAD_ID, FilledExample, Label
from .errors import CheckpointError, ConfigError, InputError, NumericError, UsageError
from .heads import (
    N_CLASSES,
    PretrainedHead,
    TaskHead,
    lm_head_forward,
    lm_head_param_delta,
    span_pool_batch,
)

TASKS = ("classification", "regression")
LR_GRID = (5e-6, 7e-6, 9e-6, 1e-5)
BATCH_GRID = (32, 48, 64)

CHECKPOINT_MAGIC = b"PLFCHKPT"
_GOLD_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    task: str
    learning_rate: float = 1e-5
    batch_size: int = 32
    epochs: int = 5
    warmup_ratio: float = 0.1
    weight_decay: float = 0.01
    dropout_p: float = 0.1
    head_dropout_p: float = 0.1
    seed: int = 0
    lm_head_reuse: bool = True
    freeze_lm_head: bool = False
    clip_norm: float | None = 1.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError("warmup_ratio must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# -- losses ------------------------------------------------------------------


def classification_loss(probs: Tensor, gold_labels) -> Tensor:
    """Mean negative log probability of the gold class over the batch.

    The summed form is ``result * batch_size``; the mean keeps learning
    rates comparable across batch sizes.
    """
    gold = np.asarray(gold_labels)
    if probs.ndim != 2 or probs.shape[1] != N_CLASSES:
        raise UsageError(f"expected (batch, {N_CLASSES}) probabilities, got {probs.shape}")
    if gold.shape != (probs.shape[0],):
        raise UsageError("one gold label per batch row required")
    if gold.min() < 0 or gold.max() >= N_CLASSES:
        raise InputError(f"gold labels must be in [0, {N_CLASSES})")
    if np.max(np.abs(probs.data.sum(axis=-1) - 1.0)) > 1e-6:
        raise UsageError("probability rows must sum to 1")
    onehot = np.zeros((probs.shape[0], N_CLASSES))
    onehot[np.arange(probs.shape[0]), gold] = 1.0
    gold_p = ad.tensor_sum(ad.mul(probs, onehot), axis=-1)
    if np.any(gold_p.data <= _GOLD_PROB_FLOOR):
        warnings.warn(
            f"gold-label probability clamped at {_GOLD_PROB_FLOOR}", RuntimeWarning
        )
    return ad.mul(ad.log(ad.clamp_min(gold_p, _GOLD_PROB_FLOOR)), -1.0).mean()


def regression_loss(pred_scores: Tensor, gold_scores) -> Tensor:
    """Mean squared error between predicted and gold plausibility scores."""
    gold = np.asarray(gold_scores, dtype=np.float64)
    if gold.shape != pred_scores.shape:
        raise UsageError(f"shape mismatch: {pred_scores.shape} vs {gold.shape}")
    if gold.size and (gold.min() < 1.0 or gold.max() > 5.0):
        raise InputError("gold scores must lie in [1, 5]")
    diff = ad.add(pred_scores, -gold)
    return ad.mul(diff, diff).mean()


# -- schedule and optimizer ---------------------------------------------------


def lr_at(step: int, total_steps: int, config) -> float:
    """Linear ramp 0 -> lr over the warmup span, then linear decay to 0."""
    if not 0 <= step <= total_steps:
        raise UsageError(f"step {step} outside [0, {total_steps}]")
    warmup = int(total_steps * config.warmup_ratio)
    if warmup > 0 and step < warmup:
        return config.learning_rate * step / warmup
    if total_steps == warmup:
        return config.learning_rate
    return config.learning_rate * (total_steps - step) / (total_steps - warmup)


@dataclass
class AdamWState:
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: list[Parameter], state: AdamWState, lr: float) -> None:
    """One AdamW update: bias-corrected moments plus decoupled weight decay.

    Parameters whose .grad is unset are skipped entirely, so untouched head
    pairs stay bit-identical.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p in params:
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {p.name}")
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data = p.data * (1.0 - lr * state.weight_decay) - lr * update


def clip_gradients(params: list[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


# -- checkpoints ---------------------------------------------------------------


@dataclass
class Checkpoint:
    kind: str
    architecture: dict
    params: dict[str, np.ndarray]
    seed: int
    config_hash: str


def config_hash(config_dict: dict) -> str:
    canonical = json.dumps(config_dict, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    payload = bytearray()
    params_meta = []
    for name, arr in ckpt.params.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        name_b = name.encode("utf-8")
        payload += struct.pack("<H", len(name_b))
        payload += name_b
        payload += struct.pack("<Q", arr.size)
        payload += arr.tobytes()
        params_meta.append({"name": name, "shape": list(arr.shape)})
    content_hash = "sha256:" + hashlib.sha256(bytes(payload)).hexdigest()
    header = {
        "format": 1,
        "kind": ckpt.kind,
        "architecture": ckpt.architecture,
        "params": params_meta,
        "provenance": {
            "seed": ckpt.seed,
            "config_hash": ckpt.config_hash,
            "content_hash": content_hash,
        },
    }
    header_b = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_b)))
        fh.write(header_b)
        fh.write(bytes(payload))


def load_checkpoint(path, expect_architecture: dict | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 4:
        raise CheckpointError(f"{path}: truncated checkpoint (no header)")
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if len(blob) < offset + header_len:
        raise CheckpointError(f"{path}: truncated checkpoint (header cut short)")
    try:
        header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    offset += header_len

    payload = blob[offset:]
    stored_hash = header.get("provenance", {}).get("content_hash", "")
    actual_hash = "sha256:" + hashlib.sha256(payload).hexdigest()
    if stored_hash != actual_hash:
        raise CheckpointError(f"{path}: content hash mismatch")

    params: dict[str, np.ndarray] = {}
    pos = 0
    for meta in header["params"]:
        try:
            (name_len,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            name = payload[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (count,) = struct.unpack_from("<Q", payload, pos)
            pos += 8
            raw = payload[pos:pos + count * 8]
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated checkpoint (array data)")
            pos += count * 8
        except struct.error as exc:
            raise CheckpointError(f"{path}: truncated checkpoint: {exc}") from exc
        if name != meta["name"]:
            raise CheckpointError(f"{path}: parameter order mismatch at {meta['name']!r}")
        arr = np.frombuffer(raw, dtype="<f8").reshape(meta["shape"]).copy()
        params[name] = arr
    if pos != len(payload):
        raise CheckpointError(f"{path}: trailing bytes after parameter data")

    ckpt = Checkpoint(
        kind=header["kind"],
        architecture=header["architecture"],
        params=params,
        seed=header["provenance"]["seed"],
        config_hash=header["provenance"]["config_hash"],
    )
    if expect_architecture is not None:
        ensure_architecture(ckpt, expect_architecture)
    return ckpt


def ensure_architecture(ckpt: Checkpoint, expected: dict) -> None:
    for key, value in expected.items():
        have = ckpt.architecture.get(key)
        if have != value:
            raise CheckpointError(
                f"architecture mismatch: {key} is {have!r} in checkpoint, expected {value!r}"
            )


def restore_parameters(params: list[Parameter], ckpt: Checkpoint, prefixes: tuple[str, ...]) -> None:
    for p in params:
        if not p.name.startswith(prefixes):
            continue
        if p.name not in ckpt.params:
            raise CheckpointError(f"checkpoint is missing parameter {p.name!r}")
        arr = ckpt.params[p.name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"dimension mismatch for {p.name!r}: checkpoint {arr.shape}, model {p.data.shape}"
            )
        p.data = arr.copy()


# -- model ----------------------------------------------------------------------


class PlausibilityModel:
    """Encoder + optional reused projection head + task head."""

    def __init__(self, config: BackboneConfig, activation: str, lm_head_reuse: bool,
                 seed: int, head_dropout_p: float):
        self.config = config
        self.activation = activation
        self.streams = RandomStreams(seed)
        self.encoder = Encoder(config, seed=seed)
        self.lm_head = (
            PretrainedHead(config.d_model, activation, self.streams.stream("init/lm_head"))
            if lm_head_reuse else None
        )
        self.task_head = TaskHead(config.d_model, head_dropout_p, self.streams)

    def parameters(self) -> list[Parameter]:
        params = list(self.encoder.parameters())
        if self.lm_head is not None:
            params.extend(self.lm_head.parameters())
        params.extend(self.task_head.parameters())
        ad.check_unique_names(params)
        return params

    def trainable_parameters(self, task: str, freeze_lm_head: bool = False) -> list[Parameter]:
        params = list(self.encoder.parameters())
        if self.lm_head is not None and not freeze_lm_head:
            params.extend(self.lm_head.parameters())
        params.extend(self.task_head.parameters_for(task))
        return params

    def forward_batch(self, ids, pad_mask, spans, task: str, mode: str) -> Tensor:
        states = self.encoder.encode_batch(ids, pad_mask, mode=mode)
        states = lm_head_forward(states, self.lm_head)
        pooled = span_pool_batch(states, spans)
        enhanced = self.task_head.enhance(pooled, mode)
        if task == "classification":
            return self.task_head.classify(enhanced)
        if task == "regression":
            return self.task_head.regress(enhanced)
        raise ConfigError(f"unknown task: {task!r}")

    def predict_examples(self, examples: list[FilledExample], task: str,
                         batch_size: int = 64) -> dict[str, np.ndarray | float]:
        out: dict = {}
        with ad.no_grad():
            for start in range(0, len(examples), batch_size):
                batch = examples[start:start + batch_size]
                ids, mask, spans = collate(batch)
                result = self.forward_batch(ids, mask, spans, task, "eval")
                for row, ex in enumerate(batch):
                    if task == "classification":
                        out[ex.example_id] = result.data[row].copy()
                    else:
                        out[ex.example_id] = float(result.data[row])
        return out


def model_param_count(config: BackboneConfig, lm_head_reuse: bool) -> int:
    """Trainable scalar count of the full fine-tuning model (both head pairs)."""
    d = config.d_model
    task_head = (d * d + d) + (d * N_CLASSES + N_CLASSES) + (d + 1)
    total = param_count(config) + task_head
    if lm_head_reuse:
        total += lm_head_param_delta(d)
    return total


def collate(examples: list[FilledExample]):
    """Right-pad a batch; spans keep their indices because padding is on the right."""
    max_len = max(len(ex.token_ids) for ex in examples)
    ids = np.full((len(examples), max_len), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(examples), max_len))
    spans = []
    for row, ex in enumerate(examples):
        n = len(ex.token_ids)
        ids[row, :n] = ex.token_ids
        mask[row, :n] = 1.0
        spans.append(ex.span)
    return ids, mask, spans


# -- fine-tuning loop --------------------------------------------------------------


@dataclass
class FineTuneResult:
    checkpoint: Checkpoint
    dev_history: list[float]
    step_log: list[tuple[int, float, float, float]]  # step, lr, mean loss, summed loss
    best_epoch: int


def _gold_arrays(examples: list[FilledExample], task: str):
    if task == "classification":
        missing = [ex.example_id for ex in examples if ex.label is None]
        if missing:
            raise InputError(f"{len(missing)} examples lack labels (first: {missing[0]})")
        return np.array([ex.label.value for ex in examples], dtype=np.int64)
    missing = [ex.example_id for ex in examples if ex.score is None]
    if missing:
        raise InputError(f"{len(missing)} examples lack scores (first: {missing[0]})")
    return np.array([ex.score for ex in examples], dtype=np.float64)


def dev_metric(model: PlausibilityModel, dev: list[FilledExample], task: str) -> float:
    preds = model.predict_examples(dev, task)
    if task == "classification":
        predicted = {eid: int(np.argmax(p)) for eid, p in preds.items()}
        gold = {ex.example_id: ex.label.value for ex in dev}
        return evaluation.accuracy(predicted, gold)
    gold = {ex.example_id: ex.score for ex in dev}
    return evaluation.spearman(preds, gold)


def finetune(checkpoint: Checkpoint, train: list[FilledExample],
             dev: list[FilledExample], config: TrainConfig) -> FineTuneResult:
    """Fine-tune from a pretrained checkpoint; keeps the best-dev epoch."""
    arch = checkpoint.architecture
    backbone_cfg = BackboneConfig(
        vocab_size=arch["vocab_size"], d_model=arch["d_model"], n_layers=arch["n_layers"],
        n_heads=arch["n_heads"], d_ff=arch["d_ff"], max_seq_len=arch["max_seq_len"],
        dropout_p=config.dropout_p,
    )
    model = PlausibilityModel(backbone_cfg, arch["activation"], config.lm_head_reuse,
                              config.seed, config.head_dropout_p)
    prefixes = ("backbone.", "lm_head.") if config.lm_head_reuse else ("backbone.",)
    restore_parameters(model.parameters(), checkpoint, prefixes)

    trainable = model.trainable_parameters(config.task, config.freeze_lm_head)
    ad.check_unique_names(trainable)
    state = AdamWState(weight_decay=config.weight_decay)

    gold_all = _gold_arrays(train, config.task)
    _gold_arrays(dev, config.task)  # fail fast if the dev split lacks targets
    n = len(train)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    total_steps = steps_per_epoch * config.epochs

    shuffle_rng = model.streams.stream("shuffle")
    step_log: list[tuple[int, float, float, float]] = []
    dev_history: list[float] = []
    best: tuple[float, int, dict] | None = None
    global_step = 0

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            batch = [train[i] for i in batch_idx]
            ids, mask, spans = collate(batch)
            lr = lr_at(global_step, total_steps, config)
            try:
                out = model.forward_batch(ids, mask, spans, config.task, "train")
                if config.task == "classification":
                    loss = classification_loss(out, gold_all[batch_idx])
                else:
                    loss = regression_loss(out, gold_all[batch_idx])
                for p in trainable:
                    p.zero_grad()
                ad.backward(loss)
                if config.clip_norm is not None:
                    clip_gradients(trainable, config.clip_norm)
                adamw_step(trainable, state, lr)
            except NumericError as exc:
                raise NumericError(f"training diverged at step {global_step}: {exc}") from exc
            mean_loss = float(loss.data)
            step_log.append((global_step, lr, mean_loss, mean_loss * len(batch)))
            global_step += 1
        metric = dev_metric(model, dev, config.task)
        dev_history.append(metric)
        if best is None or metric > best[0]:
            best = (metric, epoch, {p.name: p.data.copy() for p in model.parameters()})

    _, best_epoch, best_params = best
    architecture = dict(arch)
    architecture.update({
        "dropout_p": config.dropout_p,
        "head_dropout_p": config.head_dropout_p,
        "lm_head_reuse": config.lm_head_reuse,
        "task": config.task,
    })
    out_ckpt = Checkpoint(
        kind="finetuned",
        architecture=architecture,
        params=best_params,
        seed=config.seed,
        config_hash=config_hash(config.to_dict()),
    )
    return FineTuneResult(out_ckpt, dev_history, step_log, best_epoch)


def model_from_checkpoint(ckpt: Checkpoint) -> PlausibilityModel:
    """Rebuild a fine-tuned model for prediction; restores every parameter."""
    if ckpt.kind != "finetuned":
        raise CheckpointError(f"expected a finetuned checkpoint, got kind {ckpt.kind!r}")
    arch = ckpt.architecture
    cfg = BackboneConfig(
        vocab_size=arch["vocab_size"], d_model=arch["d_model"], n_layers=arch["n_layers"],
        n_heads=arch["n_heads"], d_ff=arch["d_ff"], max_seq_len=arch["max_seq_len"],
        dropout_p=arch["dropout_p"],
    )
    model = PlausibilityModel(cfg, arch["activation"], arch["lm_head_reuse"],
                              seed=ckpt.seed, head_dropout_p=arch["head_dropout_p"])
    restore_parameters(model.parameters(), ckpt, ("backbone.", "lm_head.", "task_head."))
    return model


def grid_configs(base: TrainConfig, learning_rates=LR_GRID, batch_sizes=BATCH_GRID):
    """The lr x batch grid as (model_id, config) pairs, ids echoing the grid labels."""
    out = []
    for lr in learning_rates:
        for bsz in batch_sizes:
            model_id = f"LR:{lr:g}, BSZ:{bsz}"
            out.append((model_id, replace(base, learning_rate=lr, batch_size=bsz)))
    return out
