"""Attention decoders used by both the experts and the chair.

Each decoder owns a private gated recurrent cell, additive attention head,
and output projection. A decode step attends over the encoder states with
the previous hidden state, feeds [prev token embedding, attention context]
to the cell, and projects the new state to a token distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .encoder import GruCell, EncoderOutput

SELF_GREEDY = "self_greedy"
FORCED = "forced"


@dataclass
class DecoderState:
    """Recurrent decoding state. The cell's output vector and its state
    coincide for this cell type, so one tensor carries both roles.
    prefix holds the consumed input tokens; prefix[0] is BOS once the
    first step has run."""

    expert_id: int
    state: Tensor
    prefix: list


@dataclass
class RolloutResult:
    tokens: list          # emitted ids, includes the terminal EOS when one occurred
    dists: list           # one (V,) distribution tensor per emitted token
    cell_calls: int

    def __len__(self):
        return len(self.tokens)


class AttnDecoder:
    def __init__(self, params, cfg, prefix, expert_id=-1):
        self.params = params
        self.cfg = cfg
        self.prefix = prefix
        self.expert_id = expert_id
        self.cell = GruCell(params, f"{prefix}.gru")

    @staticmethod
    def declare(params, cfg, prefix, rng):
        d = cfg.hidden_size
        GruCell.declare(params, f"{prefix}.gru", cfg.emb_size + d, d, rng)
        params.weight(f"{prefix}.attn.W", (2 * d, d), rng)
        params.bias(f"{prefix}.attn.b", (d,))
        params.weight(f"{prefix}.attn.v", (d,), rng)
        params.weight(f"{prefix}.out.U", (d, cfg.vocab_size), rng)
        params.bias(f"{prefix}.out.b", (cfg.vocab_size,))

    # -- attention ---------------------------------------------------------

    def attn_weights(self):
        """The (2d, da) score weight split into its encoder-state half and
        decoder-state half; both paths apply the same two halves."""
        W = self.params[f"{self.prefix}.attn.W"]
        d = self.cfg.hidden_size
        return W[:d], W[d:]

    def attend(self, state_vec, encoder_states):
        """Additive attention over the encoder states.

        Returns (context (d,), weights (m,)). encoder_states may be an
        EncoderOutput or an (m, d) tensor.
        """
        H = encoder_states.matrix() if isinstance(encoder_states, EncoderOutput) else encoder_states
        Wh, Ws = self.attn_weights()
        b = self.params[f"{self.prefix}.attn.b"]
        v = self.params[f"{self.prefix}.attn.v"]
        scores = T.tanh(H @ Wh + (state_vec @ Ws + b)) @ v
        weights = T.softmax(scores)
        context = weights @ H
        return context, weights

    # -- stepping ----------------------------------------------------------

    def init_state(self, context_vector):
        return DecoderState(expert_id=self.expert_id, state=context_vector, prefix=[])

    def decode_step(self, state, prev_token, encoder_states):
        """One step: attend, recurrent update, project to a distribution."""
        prev_token = int(prev_token)
        context, _ = self.attend(state.state, encoder_states)
        y = T.embedding(self.params["embedding"], np.asarray(prev_token))
        h = self.cell.step(T.concat([y, context]), state.state)
        logits = h @ self.params[f"{self.prefix}.out.U"] + self.params[f"{self.prefix}.out.b"]
        dist = T.softmax(logits)
        new_state = DecoderState(expert_id=state.expert_id, state=h,
                                 prefix=state.prefix + [prev_token])
        return dist, new_state

    def rollout(self, enc, mode, forced_tokens=None, max_len=None):
        """Greedy or teacher-forced decoding from the fused context vector.

        self_greedy: feed back the argmax token each step.
        forced: consume forced_tokens as the emitted sequence (producing the
        teacher-forced distributions), then continue greedily.
        Stops after EOS or max_len tokens.
        """
        if mode not in (SELF_GREEDY, FORCED):
            raise ValueError(f"unknown rollout mode {mode!r}")
        if mode == FORCED:
            if not forced_tokens:
                raise ValueError("forced rollout needs a non-empty token sequence")
            forced_tokens = [int(t) for t in forced_tokens]
        if max_len is None:
            max_len = self.cfg.max_len
        if max_len < 1:
            raise ValueError("max_len must be at least 1")

        state = self.init_state(enc.context_vector)
        prev = self.cfg.bos_id
        tokens, dists = [], []
        for j in range(max_len):
            dist, state = self.decode_step(state, prev, enc)
            if mode == FORCED and j < len(forced_tokens):
                tok = forced_tokens[j]
            else:
                tok = int(np.argmax(dist.data))
            tokens.append(tok)
            dists.append(dist)
            prev = tok
            if tok == self.cfg.eos_id:
                break
        return RolloutResult(tokens=tokens, dists=dists, cell_calls=len(dists))


class ExpertDecoder(AttnDecoder):
    def __init__(self, params, cfg, expert_id):
        super().__init__(params, cfg, f"expert{expert_id}", expert_id=expert_id)
