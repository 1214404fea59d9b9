import math

import numpy as np
import pytest

from plausifill import autodiff as ad
from plausifill.autodiff import Parameter, Tensor
from plausifill.backbone import BackboneConfig, Encoder
from plausifill.data import (
    SyntheticTaskConfig,
    build_vocabulary,
    expand,
    generate_synthetic_task,
)
from plausifill.errors import CheckpointError, ConfigError, InputError, NumericError, UsageError
from plausifill.heads import PretrainedHead
from plausifill.training import (
    AdamWState,
    Checkpoint,
    PlausibilityModel,
    TrainConfig,
    adamw_step,
    classification_loss,
    collate,
    config_hash,
    finetune,
    grid_configs,
    load_checkpoint,
    lr_at,
    model_from_checkpoint,
    model_param_count,
    regression_loss,
    restore_parameters,
    save_checkpoint,
)


class TestClassificationLoss:
    def test_uniform_probs_give_ln3(self):
        probs = Tensor(np.full((7, 3), 1.0 / 3.0))
        loss = classification_loss(probs, np.zeros(7, dtype=int))
        assert float(loss.data) == pytest.approx(math.log(3.0), abs=1e-12)

    def test_one_hot_correct_gives_zero(self):
        probs = Tensor(np.eye(3)[[0, 1, 2, 1]])
        loss = classification_loss(probs, np.array([0, 1, 2, 1]))
        assert float(loss.data) == pytest.approx(0.0, abs=1e-12)

    def test_matches_summation_oracle(self):
        rng = np.random.default_rng(0)
        raw = rng.random((16, 3)) + 0.05
        probs = raw / raw.sum(axis=1, keepdims=True)
        gold = rng.integers(0, 3, size=16)
        loss = float(classification_loss(Tensor(probs), gold).data)
        total = 0.0
        for i in range(16):
            total += -math.log(probs[i, gold[i]])
        assert loss == pytest.approx(total / 16, abs=1e-12)

    def test_rows_must_sum_to_one(self):
        with pytest.raises(UsageError):
            classification_loss(Tensor(np.full((2, 3), 0.5)), np.array([0, 1]))

    def test_zero_gold_probability_clamped_with_warning(self):
        probs = Tensor(np.array([[1.0 - 2e-13, 1e-13, 1e-13]]))
        with pytest.warns(RuntimeWarning, match="clamped"):
            loss = classification_loss(probs, np.array([2]))
        assert np.isfinite(loss.data)

    def test_nonnegative_with_equality_iff_certain(self):
        rng = np.random.default_rng(1)
        raw = rng.random((30, 3)) + 0.01
        probs = raw / raw.sum(axis=1, keepdims=True)
        gold = rng.integers(0, 3, size=30)
        assert float(classification_loss(Tensor(probs), gold).data) > 0.0


class TestRegressionLoss:
    def test_perfect_prediction(self):
        pred = Tensor(np.array([1.5, 3.0, 4.9]))
        assert float(regression_loss(pred, pred.data.copy()).data) == 0.0

    def test_constant_offset_one(self):
        gold = np.array([1.0, 2.0, 3.0])
        loss = regression_loss(Tensor(gold + 1.0), gold)
        assert float(loss.data) == pytest.approx(1.0, abs=1e-15)

    def test_matches_summation_oracle(self):
        rng = np.random.default_rng(2)
        pred = rng.uniform(1, 5, size=20)
        gold = rng.uniform(1, 5, size=20)
        loss = float(regression_loss(Tensor(pred), gold).data)
        total = sum((p - g) ** 2 for p, g in zip(pred, gold))
        assert loss == pytest.approx(total / 20, abs=1e-12)

    def test_gold_range_checked(self):
        with pytest.raises(InputError):
            regression_loss(Tensor(np.array([3.0])), np.array([5.5]))


class TestLrSchedule:
    CFG = TrainConfig(task="classification", learning_rate=2e-3, warmup_ratio=0.1)

    def test_step_zero(self):
        assert lr_at(0, 100, self.CFG) == 0.0

    def test_warmup_boundary_peak(self):
        assert lr_at(10, 100, self.CFG) == pytest.approx(2e-3, abs=1e-18)

    def test_final_step_zero(self):
        assert lr_at(100, 100, self.CFG) == 0.0

    def test_piecewise_linear_and_peak_is_max(self):
        values = [lr_at(s, 200, self.CFG) for s in range(201)]
        assert max(values) == pytest.approx(self.CFG.learning_rate, abs=1e-18)
        ramp = np.diff(values[:20])
        decay = np.diff(values[20:])
        assert np.allclose(ramp, ramp[0]) and np.allclose(decay, decay[0])

    def test_out_of_range_step(self):
        with pytest.raises(UsageError):
            lr_at(101, 100, self.CFG)


class TestAdamW:
    def test_zero_gradient_pure_decoupled_decay(self):
        p = Parameter("w", np.array([2.0, -3.0]))
        p.grad = np.zeros(2)
        state = AdamWState(weight_decay=0.01)
        adamw_step([p], state, lr=1e-3)
        assert np.array_equal(p.data, np.array([2.0, -3.0]) * (1.0 - 1e-5))

    def test_hand_worked_single_step(self):
        w0, g, lr, wd = 0.7, 0.3, 1e-2, 0.01
        p = Parameter("w", np.array([w0]))
        p.grad = np.array([g])
        state = AdamWState(weight_decay=wd)
        adamw_step([p], state, lr)
        m = (1 - 0.9) * g
        v = (1 - 0.999) * g * g
        update = (m / (1 - 0.9)) / (math.sqrt(v / (1 - 0.999)) + 1e-8)
        expected = w0 * (1 - lr * wd) - lr * update
        assert abs(float(p.data[0]) - expected) < 1e-15

    def test_skips_parameters_without_grad(self):
        p = Parameter("w", np.array([1.0]))
        state = AdamWState(weight_decay=0.5)
        adamw_step([p], state, lr=1.0)
        assert p.data[0] == 1.0

    def test_nan_gradient_names_parameter(self):
        p = Parameter("task_head.w3", np.array([1.0]))
        p.grad = np.array([np.nan])
        with pytest.raises(NumericError, match="task_head.w3"):
            adamw_step([p], AdamWState(), lr=1e-3)

    def test_converges_on_quadratic(self):
        cfg = TrainConfig(task="regression", learning_rate=0.01, warmup_ratio=0.1)
        p = Parameter("w", np.array([0.0]))
        state = AdamWState(weight_decay=0.0)
        total = 5000
        for step in range(total):
            p.grad = 2.0 * (p.data - 2.0)
            adamw_step([p], state, lr_at(step, total, cfg))
            if abs(float(p.data[0]) - 2.0) < 1e-3 and step > total * 0.5:
                break
        assert abs(float(p.data[0]) - 2.0) < 1e-3


def make_pretrained_checkpoint(d_model=16, vocab_size=32, seed=0):
    cfg = BackboneConfig(vocab_size=vocab_size, d_model=d_model, n_layers=1, n_heads=2,
                         d_ff=32, max_seq_len=48, dropout_p=0.1)
    enc = Encoder(cfg, seed=seed)
    head = PretrainedHead(d_model, "gelu", np.random.default_rng(seed + 1))
    params = {p.name: p.data.copy() for p in enc.parameters() + head.parameters()}
    arch = dict(cfg.to_dict())
    arch["activation"] = "gelu"
    return Checkpoint(kind="rtd-pretrained", architecture=arch, params=params,
                      seed=seed, config_hash=config_hash({"seed": seed}))


class TestCheckpointIO:
    def test_round_trip_bit_identical(self, tmp_path):
        ckpt = make_pretrained_checkpoint()
        path = tmp_path / "model.ckpt"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.kind == ckpt.kind
        assert loaded.architecture == ckpt.architecture
        for name, arr in ckpt.params.items():
            assert np.array_equal(loaded.params[name], arr)

    def test_save_load_save_byte_identical(self, tmp_path):
        ckpt = make_pretrained_checkpoint()
        first = tmp_path / "a.ckpt"
        second = tmp_path / "b.ckpt"
        save_checkpoint(ckpt, first)
        save_checkpoint(load_checkpoint(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(make_pretrained_checkpoint(), path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_corrupt_payload_hash_mismatch(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(make_pretrained_checkpoint(), path)
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="hash"):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"definitely not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_architecture_mismatch_on_load(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(make_pretrained_checkpoint(d_model=16), path)
        with pytest.raises(CheckpointError, match="d_model"):
            load_checkpoint(path, expect_architecture={"d_model": 64})

    def test_dimension_mismatch_on_restore(self):
        ckpt = make_pretrained_checkpoint(d_model=16)
        other = PlausibilityModel(
            BackboneConfig(vocab_size=32, d_model=8, n_layers=1, n_heads=2,
                           d_ff=16, max_seq_len=48), "gelu", True, seed=0, head_dropout_p=0.1)
        with pytest.raises(CheckpointError, match="dimension mismatch"):
            restore_parameters(other.parameters(), ckpt, ("backbone.",))


class TestModelCounts:
    def test_lm_head_reuse_delta_is_d2_plus_3d(self):
        cfg = BackboneConfig(vocab_size=64, d_model=24, n_layers=2, n_heads=4,
                             d_ff=48, max_seq_len=32)
        with_head = model_param_count(cfg, lm_head_reuse=True)
        without = model_param_count(cfg, lm_head_reuse=False)
        assert with_head - without == 24 * 24 + 3 * 24

    def test_matches_constructed_model(self):
        cfg = BackboneConfig(vocab_size=64, d_model=24, n_layers=2, n_heads=4,
                             d_ff=48, max_seq_len=32)
        for reuse in (True, False):
            model = PlausibilityModel(cfg, "gelu", reuse, seed=0, head_dropout_p=0.1)
            assert sum(p.data.size for p in model.parameters()) == model_param_count(cfg, reuse)

    def test_trainable_set_excludes_frozen_lm_head(self):
        cfg = BackboneConfig(vocab_size=64, d_model=24, n_layers=1, n_heads=4,
                             d_ff=48, max_seq_len=32)
        model = PlausibilityModel(cfg, "gelu", True, seed=0, head_dropout_p=0.1)
        free = model.trainable_parameters("classification", freeze_lm_head=False)
        frozen = model.trainable_parameters("classification", freeze_lm_head=True)
        delta = sum(p.data.size for p in free) - sum(p.data.size for p in frozen)
        assert delta == 24 * 24 + 3 * 24


@pytest.fixture(scope="module")
def tiny_task():
    task = generate_synthetic_task(SyntheticTaskConfig(n_train=48, n_dev=16, n_test=16, seed=11))
    vocab = build_vocabulary(task.train.instances, cap=256)
    train = expand(task.train.instances, vocab, 48,
                   labels=task.train.labels, scores=task.train.scores)
    dev = expand(task.dev.instances, vocab, 48,
                 labels=task.dev.labels, scores=task.dev.scores)
    return vocab, train, dev


class TestFineTune:
    def test_loss_strictly_decreases_on_fixed_batch(self, tiny_task):
        vocab, train, _ = tiny_task
        ckpt = make_pretrained_checkpoint(d_model=16, vocab_size=len(vocab))
        cfg = BackboneConfig(vocab_size=len(vocab), d_model=16, n_layers=1, n_heads=2,
                             d_ff=32, max_seq_len=48, dropout_p=0.0)
        model = PlausibilityModel(cfg, "gelu", True, seed=3, head_dropout_p=0.0)
        restore_parameters(model.parameters(), ckpt, ("backbone.", "lm_head."))
        batch = train[:16]
        ids, mask, spans = collate(batch)
        gold = np.array([ex.label.value for ex in batch])
        trainable = model.trainable_parameters("classification")
        state = AdamWState(weight_decay=0.0)
        losses = []
        for _ in range(21):
            out = model.forward_batch(ids, mask, spans, "classification", "eval")
            loss = classification_loss(out, gold)
            losses.append(float(loss.data))
            for p in trainable:
                p.zero_grad()
            ad.backward(loss)
            adamw_step(trainable, state, lr=1e-4)
        diffs = np.diff(losses)
        assert np.all(diffs < 0.0), f"loss not strictly decreasing: {losses}"

    def test_metric_history_deterministic(self, tiny_task):
        vocab, train, dev = tiny_task
        ckpt = make_pretrained_checkpoint(d_model=16, vocab_size=len(vocab))
        cfg = TrainConfig(task="classification", learning_rate=3e-4, batch_size=16,
                          epochs=2, seed=5)
        first = finetune(ckpt, train, dev, cfg)
        second = finetune(ckpt, train, dev, cfg)
        assert first.dev_history == second.dev_history
        assert first.step_log == second.step_log
        for name, arr in first.checkpoint.params.items():
            assert np.array_equal(arr, second.checkpoint.params[name])

    def test_reuse_off_runs_and_reports(self, tiny_task):
        vocab, train, dev = tiny_task
        ckpt = make_pretrained_checkpoint(d_model=16, vocab_size=len(vocab))
        cfg = TrainConfig(task="classification", learning_rate=3e-4, batch_size=16,
                          epochs=1, seed=6, lm_head_reuse=False)
        result = finetune(ckpt, train, dev, cfg)
        assert len(result.dev_history) == 1
        assert not any(n.startswith("lm_head.") for n in result.checkpoint.params)

    def test_regression_task_runs(self, tiny_task):
        vocab, train, dev = tiny_task
        ckpt = make_pretrained_checkpoint(d_model=16, vocab_size=len(vocab))
        cfg = TrainConfig(task="regression", learning_rate=3e-4, batch_size=16,
                          epochs=1, seed=7)
        result = finetune(ckpt, train, dev, cfg)
        assert -1.0 <= result.dev_history[0] <= 1.0

    def test_predict_round_trip_through_checkpoint(self, tiny_task, tmp_path):
        vocab, train, dev = tiny_task
        ckpt = make_pretrained_checkpoint(d_model=16, vocab_size=len(vocab))
        cfg = TrainConfig(task="classification", learning_rate=3e-4, batch_size=16,
                          epochs=1, seed=8)
        result = finetune(ckpt, train, dev, cfg)
        path = tmp_path / "fine.ckpt"
        save_checkpoint(result.checkpoint, path)
        model = model_from_checkpoint(load_checkpoint(path))
        preds = model.predict_examples(dev, "classification")
        assert set(preds) == {ex.example_id for ex in dev}
        for probs in preds.values():
            assert abs(float(probs.sum()) - 1.0) < 1e-9


class TestGrid:
    def test_grid_labels(self):
        base = TrainConfig(task="classification")
        pairs = grid_configs(base)
        assert len(pairs) == 12
        ids = [model_id for model_id, _ in pairs]
        assert "LR:9e-06, BSZ:32" in ids
        assert "LR:1e-05, BSZ:64" in ids

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(task="ranking")
        with pytest.raises(ConfigError):
            TrainConfig(task="classification", learning_rate=0.0)
