"""Chair decoder: mixes its own token distribution with the experts'.

The experts are rolled out once per response (greedy at generation time,
teacher-forced during training). At every chair step two pooled feature
matrices summarize them: the retrospective pool averages each expert's
distributions over the steps already decided, and the prospective pool
averages them over the remaining steps of the pre-rolled sequences. A two
layer perceptron maps [chair dist, retro pool, prospective pool] to 2k+1
logits whose softmax weights the mixture: one weight for the chair and a
retrospective plus a prospective weight per expert. Disabled components
are masked with -inf logits before the softmax, so they carry weight
exactly zero and the rest renormalizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .expert import AttnDecoder, RolloutResult, SELF_GREEDY

NEG_INF = -np.inf


@dataclass(frozen=True)
class MixtureFlags:
    """Which coordination channels stay active. The chair channel always is."""

    use_retro: bool = True
    use_prosp: bool = True


@dataclass
class CoordinationFeatures:
    retro_pool: Tensor    # (k, V)
    prosp_pool: Tensor    # (k, V)
    beta: Tensor          # (2k+1,), order: [chair, retro 0..k-1, prosp 0..k-1]


@dataclass
class GenerationResult:
    tokens: list              # emitted ids, includes terminal EOS when emitted
    step_dists: list          # mixture distribution per step, (V,) arrays
    betas: list               # coordination weights per step, (2k+1,) arrays
    expert_rollouts: list     # cached RolloutResult per expert (may be empty)
    expert_cell_calls: int
    chair_cell_calls: int


def effective_dist(cache: RolloutResult, step):
    """Expert distribution at 1-indexed step, holding the final one past EOS."""
    return cache.dists[min(step, len(cache)) - 1]


class ChairDecoder(AttnDecoder):
    def __init__(self, params, cfg):
        super().__init__(params, cfg, "chair")

    @staticmethod
    def declare(params, cfg, rng):
        AttnDecoder.declare(params, cfg, "chair", rng)
        k, v, d = cfg.n_experts, cfg.vocab_size, cfg.hidden_size
        params.weight("chair.coord.W1", ((2 * k + 1) * v, d), rng)
        params.bias("chair.coord.b1", (d,))
        params.weight("chair.coord.W2", (d, 2 * k + 1), rng)
        params.bias("chair.coord.b2", (2 * k + 1,))

    # -- expert caches and pools --------------------------------------------

    def precompute_expert_rollouts(self, enc, experts, max_len=None):
        """Roll every expert once, greedily, from the shared context."""
        return [ex.rollout(enc, SELF_GREEDY, max_len=max_len) for ex in experts]

    def _pool(self, caches, lo, hi):
        rows = []
        for cache in caches:
            steps = [T.reshape(effective_dist(cache, i), (1, self.cfg.vocab_size))
                     for i in range(lo, hi + 1)]
            rows.append(T.mean_pool(T.concat(steps, axis=0), axis=0))
        return T.concat([T.reshape(r, (1, self.cfg.vocab_size)) for r in rows], axis=0)

    def build_retrospective(self, caches, j):
        """(k, V) mean of each expert's distributions over steps 1..j-1.
        The zero matrix at j=1: nothing has been decided yet."""
        if j < 1:
            raise ValueError("step index must be >= 1")
        if j == 1:
            return Tensor(np.zeros((len(caches), self.cfg.vocab_size)))
        return self._pool(caches, 1, j - 1)

    def build_prospective(self, caches, j, horizon):
        """(k, V) mean of each expert's distributions over steps j..horizon,
        reading the final distribution for steps past an expert's EOS."""
        if j < 1:
            raise ValueError("step index must be >= 1")
        if horizon < j:
            raise ValueError("prospective horizon must be >= the current step")
        return self._pool(caches, j, horizon)

    # -- coordination ---------------------------------------------------------

    def beta_mask(self, flags: MixtureFlags):
        k = self.cfg.n_experts
        mask = np.zeros(2 * k + 1)
        if not flags.use_retro:
            mask[1:1 + k] = NEG_INF
        if not flags.use_prosp:
            mask[1 + k:] = NEG_INF
        return mask

    def coordination_weights(self, chair_dist, retro_pool, prosp_pool, flags):
        """Softmax over the full 2k+1 logit vector from the two-layer
        perceptron; masked channels get -inf logits, hence weight zero."""
        k, v = self.cfg.n_experts, self.cfg.vocab_size
        feats = T.concat([chair_dist,
                          T.reshape(retro_pool, (k * v,)),
                          T.reshape(prosp_pool, (k * v,))])
        p = self.params
        hidden = T.tanh(feats @ p["chair.coord.W1"] + p["chair.coord.b1"])
        logits = hidden @ p["chair.coord.W2"] + p["chair.coord.b2"]
        mask = self.beta_mask(flags)
        if np.any(np.isneginf(mask)):
            logits = logits + Tensor(mask)
        return T.softmax_rows(logits)

    def mixture_step(self, chair_dist, expert_dists, beta):
        """Convex mixture of the chair and expert step distributions."""
        k = self.cfg.n_experts
        if len(expert_dists) != k:
            raise ValueError(f"expected {k} expert distributions, got {len(expert_dists)}")
        if beta.data.shape != (2 * k + 1,):
            raise ValueError("coordination weight vector has the wrong arity")
        for name, d in [("chair", chair_dist)] + [(f"expert{i}", d) for i, d in enumerate(expert_dists)]:
            s = d.data.sum()
            if abs(s - 1.0) > 1e-6 or np.any(d.data < -1e-12):
                raise ValueError(f"{name} distribution is not normalized (sum={s!r})")
        if abs(beta.data.sum() - 1.0) > 1e-6 or np.any(beta.data < 0):
            raise ValueError("coordination weights are not a distribution")
        mix = T.mul(beta[0], chair_dist)
        for l, dist in enumerate(expert_dists):
            w = T.add(beta[1 + l], beta[1 + k + l])
            mix = T.add(mix, T.mul(w, dist))
        return mix

    # -- generation -----------------------------------------------------------

    def generate(self, enc, experts, flags, max_len=None):
        """Greedy chair decoding with pre-rolled expert caches.

        The experts roll out once; the chair then decides token by token.
        When both expert channels are masked the caches are skipped and the
        mixture degenerates to the chair distribution, which is exactly the
        full mixture with zero expert weights.
        """
        if max_len is None:
            max_len = self.cfg.max_len
        if max_len < 1:
            raise ValueError("max_len must be at least 1")
        k, v = self.cfg.n_experts, self.cfg.vocab_size
        use_caches = flags.use_retro or flags.use_prosp
        caches = self.precompute_expert_rollouts(enc, experts, max_len) if use_caches else []
        expert_calls = sum(c.cell_calls for c in caches)
        horizon = max((len(c) for c in caches), default=0)
        zero_pool = Tensor(np.zeros((k, v)))

        state = self.init_state(enc.context_vector)
        prev = self.cfg.bos_id
        tokens, step_dists, betas = [], [], []
        for j in range(1, max_len + 1):
            chair_dist, state = self.decode_step(state, prev, enc)
            retro = self.build_retrospective(caches, j) if (use_caches and flags.use_retro) else zero_pool
            prosp = (self.build_prospective(caches, j, max(j, horizon))
                     if (use_caches and flags.use_prosp) else zero_pool)
            beta = self.coordination_weights(chair_dist, retro, prosp, flags)
            if use_caches:
                mix = self.mixture_step(chair_dist, [effective_dist(c, j) for c in caches], beta)
            else:
                mix = T.mul(beta[0], chair_dist)
            tok = int(np.argmax(mix.data))
            tokens.append(tok)
            step_dists.append(mix.data.copy())
            betas.append(beta.data.copy())
            prev = tok
            if tok == self.cfg.eos_id:
                break
        return GenerationResult(tokens=tokens, step_dists=step_dists, betas=betas,
                                expert_rollouts=caches, expert_cell_calls=expert_calls,
                                chair_cell_calls=len(tokens))
