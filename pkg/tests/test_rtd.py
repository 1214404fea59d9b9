import math

import numpy as np
import pytest

from plausifill.autodiff import Tensor
from plausifill.backbone import BackboneConfig, Encoder
from plausifill.data import (
    FIRST_WORD_ID,
    GrammarConfig,
    SyntheticGrammar,
    SyntheticTaskConfig,
    Vocabulary,
    build_vocabulary,
    generate_synthetic_task,
)
from plausifill.errors import ConfigError, NumericError
from plausifill.rtd import (
    MlmGenerator,
    PretrainConfig,
    SyntheticCorpusConfig,
    UniformGenerator,
    corrupt,
    evaluate_rtd,
    generate_corpus,
    pretrain,
    read_corpus,
    rtd_loss,
    write_corpus,
)


@pytest.fixture(scope="module")
def grammar_and_vocab():
    task = generate_synthetic_task(SyntheticTaskConfig(n_train=60, n_dev=8, n_test=8, seed=0))
    vocab = build_vocabulary(task.train.instances, cap=256)
    return task.grammar, vocab


class TestGenerateCorpus:
    def test_exact_sentence_count(self, grammar_and_vocab):
        grammar, vocab = grammar_and_vocab
        cfg = SyntheticCorpusConfig(n_sentences=1000, vocab_size=256, seed=1)
        assert len(generate_corpus(cfg, grammar, vocab)) == 1000

    def test_same_seed_identical(self, grammar_and_vocab):
        grammar, vocab = grammar_and_vocab
        cfg = SyntheticCorpusConfig(n_sentences=50, vocab_size=256, seed=2)
        a = generate_corpus(cfg, grammar, vocab)
        b = generate_corpus(cfg, grammar, vocab)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_ids_in_range(self, grammar_and_vocab):
        grammar, vocab = grammar_and_vocab
        cfg = SyntheticCorpusConfig(n_sentences=100, vocab_size=256, seed=3)
        for seq in generate_corpus(cfg, grammar, vocab):
            assert seq.min() >= FIRST_WORD_ID and seq.max() < 256

    def test_lengths_within_configured_range(self, grammar_and_vocab):
        grammar, vocab = grammar_and_vocab
        cfg = SyntheticCorpusConfig(n_sentences=200, len_min=6, len_max=21, vocab_size=256, seed=4)
        lengths = {len(s) for s in generate_corpus(cfg, grammar, vocab)}
        assert min(lengths) >= 6 and max(lengths) <= 21
        assert len(lengths) > 2  # clause count and clause kind both vary

    def test_marker_clauses_expose_adjacent_classes(self, grammar_and_vocab):
        grammar, _ = grammar_and_vocab
        same = grammar.clause("noun2x1", "same")
        marked = grammar.clause("noun2x1", "next")
        assert same == ["the", "noun2x1", "verb2x1", "the", "noun2x2", "."]
        assert marked == ["now", "the", "noun2x1", "verb2x1", "the", "noun3x1", "."]

    def test_vocab_too_small_for_grammar(self):
        grammar = SyntheticGrammar(GrammarConfig())
        tiny_vocab = Vocabulary(["the", "."])
        cfg = SyntheticCorpusConfig(n_sentences=10, vocab_size=256, seed=5)
        with pytest.raises(ConfigError, match="too small"):
            generate_corpus(cfg, grammar, tiny_vocab)

    def test_file_round_trip(self, grammar_and_vocab, tmp_path):
        grammar, vocab = grammar_and_vocab
        cfg = SyntheticCorpusConfig(n_sentences=20, vocab_size=256, seed=6)
        sentences = generate_corpus(cfg, grammar, vocab)
        path = tmp_path / "corpus.txt"
        write_corpus(path, sentences)
        loaded = read_corpus(path)
        assert all(np.array_equal(a, b) for a, b in zip(sentences, loaded))


class TestCorrupt:
    def test_mask_rate_zero_identity(self):
        x = np.arange(10) + FIRST_WORD_ID
        result = corrupt(x, 0.0, UniformGenerator(64), np.random.default_rng(0))
        assert np.array_equal(result.corrupted_ids, x)
        assert result.original_flags.all()
        assert len(result.mask_positions) == 0

    def test_mask_count_is_ceiling(self):
        x = np.arange(10) + FIRST_WORD_ID
        result = corrupt(x, 0.15, UniformGenerator(64), np.random.default_rng(1))
        assert len(result.mask_positions) == math.ceil(0.15 * 10)

    def test_false_flags_only_at_selected_positions(self):
        rng = np.random.default_rng(2)
        x = rng.integers(FIRST_WORD_ID, 64, size=40)
        result = corrupt(x, 0.3, UniformGenerator(64), rng)
        false_at = np.nonzero(~result.original_flags)[0]
        assert set(false_at) <= set(result.mask_positions)
        for pos in false_at:
            assert result.corrupted_ids[pos] != result.original_ids[pos]

    def test_uniform_generator_false_flag_rate(self):
        # ceil(0.15 n) replaced; a uniform sample collides with the original
        # once in (vocab - reserved), so false flags ~ 0.15 * (1 - 1/508).
        rng = np.random.default_rng(3)
        n = 100_000
        x = rng.integers(FIRST_WORD_ID, 512, size=n)
        result = corrupt(x, 0.15, UniformGenerator(512), rng)
        false_rate = float((~result.original_flags).mean())
        expected = 0.15 * (1.0 - 1.0 / (512 - FIRST_WORD_ID))
        assert abs(false_rate - expected) / expected < 0.02


class TestRtdLoss:
    def test_perfect_predictions_near_zero(self):
        flags = np.array([True, False, True, True])
        probs = np.where(flags, 1.0 - 1e-12, 1e-12)
        loss = float(rtd_loss(Tensor(probs), flags).data)
        assert loss < 1e-6 * len(flags)

    def test_uniform_half_gives_n_ln2(self):
        n = 17
        flags = np.random.default_rng(4).random(n) < 0.5
        loss = float(rtd_loss(Tensor(np.full(n, 0.5)), flags).data)
        assert loss == pytest.approx(n * math.log(2.0), abs=1e-12)

    def test_matches_per_token_summation_oracle(self):
        rng = np.random.default_rng(5)
        probs = rng.uniform(0.05, 0.95, size=30)
        flags = rng.random(30) < 0.5
        loss = float(rtd_loss(Tensor(probs), flags).data)
        total = 0.0
        for p, f in zip(probs, flags):
            total += -math.log(p if f else 1.0 - p)
        assert loss == pytest.approx(total, abs=1e-12)

    def test_equals_binary_cross_entropy_identity(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            probs = rng.uniform(0.01, 0.99, size=25)
            flags = rng.random(25) < 0.5
            loss = float(rtd_loss(Tensor(probs), flags).data)
            y = flags.astype(float)
            bce = float(-(y * np.log(probs) + (1 - y) * np.log(1 - probs)).sum())
            assert loss == pytest.approx(bce, abs=1e-12)

    def test_probability_outside_open_interval_rejected(self):
        with pytest.raises(NumericError):
            rtd_loss(Tensor(np.array([0.0, 0.5])), np.array([True, True]))
        with pytest.raises(NumericError):
            rtd_loss(Tensor(np.array([1.0, 0.5])), np.array([True, True]))


@pytest.fixture(scope="module")
def small_setup(grammar_and_vocab):
    grammar, vocab = grammar_and_vocab
    corpus_cfg = SyntheticCorpusConfig(n_sentences=240, vocab_size=256, seed=7)
    corpus = generate_corpus(corpus_cfg, grammar, vocab)
    return vocab, corpus


class TestPretrain:
    def _run(self, vocab, corpus, steps=40, seed=9):
        bb = BackboneConfig(vocab_size=256, d_model=32, n_layers=1, n_heads=2,
                            d_ff=64, max_seq_len=32, dropout_p=0.1)
        encoder = Encoder(bb, seed=seed)
        generator = MlmGenerator(256, 32, seed=seed + 1, d_model=16, n_heads=2, d_ff=32)
        cfg = PretrainConfig(steps=steps, batch_size=16, learning_rate=5e-4, seed=seed)
        return pretrain(encoder, generator, corpus, cfg)

    def test_heldout_loss_improves(self, small_setup):
        vocab, corpus = small_setup
        result = self._run(vocab, corpus, steps=80)
        assert result.eval_after.loss_sum < result.eval_before.loss_sum

    def test_same_seed_bit_identical_checkpoint(self, small_setup):
        vocab, corpus = small_setup
        first = self._run(vocab, corpus, steps=25, seed=13)
        second = self._run(vocab, corpus, steps=25, seed=13)
        assert first.step_log == second.step_log
        assert first.checkpoint.params.keys() == second.checkpoint.params.keys()
        for name, arr in first.checkpoint.params.items():
            assert np.array_equal(arr, second.checkpoint.params[name])

    def test_checkpoint_contains_all_three_blocks(self, small_setup):
        vocab, corpus = small_setup
        result = self._run(vocab, corpus, steps=5)
        names = set(result.checkpoint.params)
        assert any(n.startswith("backbone.") for n in names)
        assert any(n.startswith("lm_head.") for n in names)
        assert {"rtd_head.w", "rtd_head.b"} <= names
        assert not any(n.startswith("generator.") for n in names)

    def test_training_log_one_entry_per_step(self, small_setup):
        vocab, corpus = small_setup
        result = self._run(vocab, corpus, steps=12)
        assert [entry[0] for entry in result.step_log] == list(range(12))
