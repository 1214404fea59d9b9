# The toy transformer encoder: shapes, position sensitivity, attention mass.

import numpy as np

from plausifill.backbone import BackboneConfig, Encoder, param_count

config = BackboneConfig(vocab_size=64, d_model=32, n_layers=2, n_heads=4,
                        d_ff=64, max_seq_len=32, dropout_p=0.1)
print("learnable scalars:", param_count(config))

encoder = Encoder(config, seed=0)
ids = np.array([5, 9, 17, 3])
states = encoder.encode(ids)
print("encode([5, 9, 17, 3]) ->", states.shape)

# positions matter: swapping two tokens changes the representation
swapped = encoder.encode(np.array([9, 5, 17, 3]))
print("L2 change after swapping two tokens:",
      round(float(np.linalg.norm(states.data - swapped.data)), 4))

# attention rows are probability distributions
attn = []
encoder.encode(ids, collect_attn=attn)
print("attention maps collected:", len(attn), "(layers x heads)")
print("max |row sum - 1| over all maps:",
      max(float(np.abs(a.sum(axis=-1) - 1).max()) for a in attn))

# padded keys receive no attention
batch = np.array([[5, 9, 17, 3, 0, 0]])
mask = np.array([[1.0, 1.0, 1.0, 1.0, 0.0, 0.0]])
attn = []
encoder.encode_batch(batch, mask, collect_attn=attn)
print("attention mass on padded keys:", float(attn[0][0, :4, 4:].max()))
