"""Full network assembly: shared encoder, k experts, one chair."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ModelParams
from .tensor import Tensor
from .encoder import ContextEncoder
from .expert import ExpertDecoder, FORCED
from .chair import ChairDecoder, MixtureFlags, effective_dist

PARAM_SEED_SALT = 101


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_experts: int
    n_belief: int
    n_db: int
    emb_size: int = 8
    hidden_size: int = 16
    max_src_len: int = 16
    max_len: int = 20          # generation cap per decoder
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2
    unk_id: int = 3

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ValueError("vocab must at least hold the special tokens")
        if self.n_experts < 1:
            raise ValueError("need at least one expert")


class MoGNet:
    """Owns the parameter store and the encoder/expert/chair modules.

    Parameter creation order is fixed and variant-independent, so identical
    (config, seed) pairs give bit-identical weights.
    """

    def __init__(self, cfg: ModelConfig, seed=0):
        self.cfg = cfg
        self.params = ModelParams()
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), PARAM_SEED_SALT]))
        self.params.weight("embedding", (cfg.vocab_size, cfg.emb_size), rng)
        ContextEncoder.declare(self.params, cfg, rng)
        for l in range(cfg.n_experts):
            ExpertDecoder.declare(self.params, cfg, f"expert{l}", rng)
        ChairDecoder.declare(self.params, cfg, rng)

        self.encoder = ContextEncoder(self.params, cfg)
        self.experts = [ExpertDecoder(self.params, cfg, l) for l in range(cfg.n_experts)]
        self.chair = ChairDecoder(self.params, cfg)

    def parameters(self):
        return self.params.tensors()

    def zero_grad(self):
        self.params.zero_grads()

    def encode(self, sample):
        return self.encoder.encode(sample)

    def generate(self, sample, flags=MixtureFlags(), max_len=None):
        enc = self.encode(sample)
        return self.chair.generate(enc, self.experts, flags, max_len=max_len)

    def teacher_forced_probs(self, sample, flags=MixtureFlags()):
        """Per-step gold token probabilities under teacher forcing.

        Expert caches are forced on the gold prefix, matching the training
        graph. Returns (mixture_probs (n,), expert_probs (k, n))."""
        target = list(sample.target_ids)
        n = len(target)
        if n == 0:
            raise ValueError("sample has an empty target")
        enc = self.encode(sample)
        caches = [ex.rollout(enc, FORCED, forced_tokens=target, max_len=n)
                  for ex in self.experts]
        k = self.cfg.n_experts
        expert_probs = np.zeros((k, n))
        for l, cache in enumerate(caches):
            for j, tok in enumerate(target):
                expert_probs[l, j] = cache.dists[j].data[tok]

        chair = self.chair
        zero_pool = Tensor(np.zeros((k, self.cfg.vocab_size)))
        state = chair.init_state(enc.context_vector)
        prev = self.cfg.bos_id
        mix_probs = np.zeros(n)
        for j1 in range(1, n + 1):
            chair_dist, state = chair.decode_step(state, prev, enc)
            retro = chair.build_retrospective(caches, j1) if flags.use_retro else zero_pool
            prosp = chair.build_prospective(caches, j1, n) if flags.use_prosp else zero_pool
            beta = chair.coordination_weights(chair_dist, retro, prosp, flags)
            mix = chair.mixture_step(chair_dist, [effective_dist(c, j1) for c in caches], beta)
            tok = target[j1 - 1]
            mix_probs[j1 - 1] = mix.data[tok]
            prev = tok
        return mix_probs, expert_probs
