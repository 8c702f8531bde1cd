"""How the chair combines expert opinions, and what the ablation masks do.

At each step the chair sees its own token distribution plus two pooled views
of every expert's rollout: retrospective (what the expert said so far) and
prospective (what it plans to say). A small gating net turns that into 2k+1
mixture weights. Masking a family pins its weights to exactly zero, which is
how the reduced variants are built."""

import numpy as np

from mognet import MixtureFlags, ModelConfig, MoGNet
from mognet.corpus import DialogueContext

cfg = ModelConfig(vocab_size=10, n_experts=2, n_belief=4, n_db=2,
                  emb_size=5, hidden_size=8, max_src_len=8, max_len=6)
model = MoGNet(cfg, seed=3)

sample = DialogueContext(utterance_ids=[4, 7, 5], belief=np.array([1.0, 0, 0, 0]),
                         db=np.array([1.0, 0]), intents=("a",), target_ids=[6, 2])

VARIANTS = [
    ("full mixture     ", MixtureFlags(use_retro=True, use_prosp=True)),
    ("no prospective   ", MixtureFlags(use_retro=True, use_prosp=False)),
    ("chair only       ", MixtureFlags(use_retro=False, use_prosp=False)),
]

k = cfg.n_experts
for name, flags in VARIANTS:
    out = model.generate(sample, flags)
    beta = out.betas[0]
    print(f"{name} tokens={out.tokens}")
    print(f"  step-0 beta: chair {beta[0]:.3f}"
          f"  retro {np.round(beta[1:1 + k], 3)}"
          f"  prosp {np.round(beta[1 + k:], 3)}")

# masked channels are exact zeros, not merely small
out = model.generate(sample, MixtureFlags(use_retro=False, use_prosp=False))
assert all(b[0] == 1.0 and np.all(b[1:] == 0.0) for b in out.betas)
print("\nchair-only run puts all weight on the chair at every step")

# every mixture is a proper distribution
out = model.generate(sample, MixtureFlags())
sums = [float(d.sum()) for d in out.step_dists]
print("mixture sums:", np.round(sums, 15))
print("cell calls  : chair", out.chair_cell_calls,
      "experts", out.expert_cell_calls,
      f"(k={k}, emitted {len(out.tokens)})")
