"""Encode a dialogue context and watch an expert attend over it.

The encoder runs a GRU over the user utterance, then fuses the final state
with the belief and database vectors into one context vector. Each decoding
step re-scores all encoder states, so attention shifts as the prefix grows."""

import numpy as np

from mognet import MixtureFlags, ModelConfig, MoGNet
from mognet.corpus import BOS_ID, DialogueContext

cfg = ModelConfig(vocab_size=12, n_experts=2, n_belief=4, n_db=2,
                  emb_size=6, hidden_size=8, max_src_len=10, max_len=8)
model = MoGNet(cfg, seed=7)

sample = DialogueContext(
    utterance_ids=[5, 9, 4, 11, 6],
    belief=np.array([1.0, 0.0, 1.0, 0.0]),
    db=np.array([1.0, 0.0]),
    intents=("a",),
    target_ids=[7, 8, 2],
)

enc = model.encode(sample)
print("source length        :", len(enc.hidden_states))
print("hidden state shape   :", enc.hidden_states[0].shape)
print("fused context vector :", np.round(enc.context_vector.data, 3))

# step an expert decoder by hand and print where it looks
expert = model.experts[0]
state = expert.init_state(enc.context_vector)
prev = BOS_ID
for step in range(3):
    dist, state = expert.decode_step(state, prev, enc)
    ctx, alpha = expert.attend(state.state, enc)
    prev = int(np.argmax(dist.data))
    bar = " ".join(f"{a:.3f}" for a in alpha.data)
    print(f"step {step}: attention [{bar}] -> token {prev} "
          f"(p={dist.data[prev]:.3f})")

# the two experts share the encoder but not the decoders
d0, _ = model.experts[0].decode_step(model.experts[0].init_state(enc.context_vector), BOS_ID, enc)
d1, _ = model.experts[1].decode_step(model.experts[1].init_state(enc.context_vector), BOS_ID, enc)
print("\nexpert disagreement at step 0:",
      float(np.abs(d0.data - d1.data).sum()))

out = model.generate(sample, MixtureFlags())
print("full mixture generation:", out.tokens)
