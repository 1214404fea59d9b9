# Replaced-token-detection pretraining on a synthetic clause corpus
# (shrunk well below the defaults so the demo finishes in ~30 seconds).

import numpy as np

from plausifill.backbone import BackboneConfig, Encoder
from plausifill.data import (GrammarConfig, SyntheticGrammar, SyntheticTaskConfig,
                             build_vocabulary, generate_synthetic_task)
from plausifill.rtd import (MlmGenerator, PretrainConfig, SyntheticCorpusConfig,
                            UniformGenerator, corrupt, generate_corpus, pretrain)

task = generate_synthetic_task(SyntheticTaskConfig(n_train=120, n_dev=16, n_test=16, seed=0))
vocab = build_vocabulary(task.train.instances, cap=256)
corpus = generate_corpus(SyntheticCorpusConfig(n_sentences=600, vocab_size=256, seed=0),
                         task.grammar, vocab)
print(f"corpus: {len(corpus)} sentences over a {len(vocab)}-token vocabulary")

# corruption: mask 15% of positions, replace with generator samples
example = corpus[0]
result = corrupt(example, 0.15, UniformGenerator(len(vocab)), np.random.default_rng(7))
print("original :", " ".join(vocab.decode(result.original_ids)))
print("corrupted:", " ".join(vocab.decode(result.corrupted_ids)))
print("flags    :", "".join("." if f else "X" for f in result.original_flags))

encoder = Encoder(BackboneConfig(vocab_size=256, d_model=48, n_layers=2, n_heads=4,
                                 d_ff=96, max_seq_len=32, dropout_p=0.1), seed=0)
generator = MlmGenerator(256, 32, seed=1, sample_limit=len(vocab))
config = PretrainConfig(steps=250, batch_size=32, seed=0)
outcome = pretrain(encoder, generator, corpus, config)

before, after = outcome.eval_before, outcome.eval_after
print(f"held-out token accuracy: {before.accuracy:.3f} -> {after.accuracy:.3f}")
print(f"held-out loss: {before.loss_sum:.1f} -> {after.loss_sum:.1f} "
      f"(constant-predictor bound {after.majority_bound:.1f})")
print("checkpoint blocks:", sorted({name.split('.')[0] for name in outcome.checkpoint.params}))
