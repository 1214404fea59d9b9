# Fine-tune the pretrained encoder with span-pooled heads, then predict.
# Small sizes throughout: the point is the moving parts, not the score.

import numpy as np

from plausifill.backbone import BackboneConfig, Encoder
from plausifill.data import (SyntheticTaskConfig, build_vocabulary, expand,
                             generate_synthetic_task)
from plausifill.rtd import MlmGenerator, PretrainConfig, SyntheticCorpusConfig, \
    generate_corpus, pretrain
from plausifill.training import TrainConfig, finetune, model_from_checkpoint

task = generate_synthetic_task(SyntheticTaskConfig(n_train=400, n_dev=80, n_test=80, seed=0))
vocab = build_vocabulary(task.train.instances, cap=256)
corpus = generate_corpus(SyntheticCorpusConfig(n_sentences=1200, vocab_size=256, seed=0),
                         task.grammar, vocab)

encoder = Encoder(BackboneConfig(vocab_size=256, d_model=64, n_layers=2, n_heads=4,
                                 d_ff=128, max_seq_len=64, dropout_p=0.1), seed=0)
generator = MlmGenerator(256, 64, seed=1, sample_limit=len(vocab))
pretrained = pretrain(encoder, generator, corpus,
                      PretrainConfig(steps=400, batch_size=32, seed=0)).checkpoint

train = expand(task.train.instances, vocab, 64,
               labels=task.train.labels, scores=task.train.scores)
dev = expand(task.dev.instances, vocab, 64,
             labels=task.dev.labels, scores=task.dev.scores)
print(f"{len(train)} training rows from {len(task.train.instances)} instances (5x expansion)")

config = TrainConfig(task="classification", learning_rate=2e-3, batch_size=32,
                     epochs=10, seed=0)
result = finetune(pretrained, train, dev, config)
print("dev accuracy per epoch:", [round(v, 3) for v in result.dev_history],
      f"(best epoch {result.best_epoch})")

model = model_from_checkpoint(result.checkpoint)
preds = model.predict_examples(dev[:5], "classification")
for ex in dev[:5]:
    probs = preds[ex.example_id]
    print(f"  {ex.example_id}: filler {ex.filler_text!r} gold {ex.label.name:<12}"
          f" probs {np.round(probs, 3)}")

# the same head stack also regresses a bounded 1..5 plausibility score
reg = finetune(pretrained, train, dev,
               TrainConfig(task="regression", learning_rate=2e-3, batch_size=32,
                           epochs=10, seed=0))
print("dev rank correlation per epoch:", [round(v, 3) for v in reg.dev_history])
