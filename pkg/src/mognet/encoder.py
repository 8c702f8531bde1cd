"""Shared utterance encoder.

A gated recurrent cell reads the token sequence left to right from an all
zero initial state. The final hidden state is fused with the belief and
database bit vectors through one tanh affine layer; the fused vector
initializes every decoder. Hidden states depend only on the tokens, never
on belief or database input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


class GruCell:
    """Update/reset gated cell. h' = (1-z)*cand + z*h.

    Works on a single state vector (d,) or a batch of rows (B, d); the
    same code path serves both because every op broadcasts over rows.
    """

    def __init__(self, params, prefix):
        p = params
        self.Wz, self.Uz, self.bz = p[f"{prefix}.Wz"], p[f"{prefix}.Uz"], p[f"{prefix}.bz"]
        self.Wr, self.Ur, self.br = p[f"{prefix}.Wr"], p[f"{prefix}.Ur"], p[f"{prefix}.br"]
        self.Wn, self.Un, self.bn = p[f"{prefix}.Wn"], p[f"{prefix}.Un"], p[f"{prefix}.bn"]

    @staticmethod
    def declare(params, prefix, input_size, hidden_size, rng):
        for gate in ("z", "r", "n"):
            params.weight(f"{prefix}.W{gate}", (input_size, hidden_size), rng)
            params.weight(f"{prefix}.U{gate}", (hidden_size, hidden_size), rng)
            params.bias(f"{prefix}.b{gate}", (hidden_size,))

    def step(self, x, h):
        z = T.sigmoid(x @ self.Wz + h @ self.Uz + self.bz)
        r = T.sigmoid(x @ self.Wr + h @ self.Ur + self.br)
        cand = T.tanh(x @ self.Wn + T.mul(r, h) @ self.Un + self.bn)
        return T.add(T.mul(T.sub(1.0, z), cand), T.mul(z, h))


@dataclass
class EncoderOutput:
    """Per-step hidden states plus the fused context vector."""

    hidden_states: list
    final_state: Tensor
    context_vector: Tensor
    _matrix: Tensor = field(default=None, repr=False)

    def matrix(self):
        """(m, d) stack of the hidden states, built once per encoding."""
        if self._matrix is None:
            rows = [T.reshape(h, (1, h.shape[0])) for h in self.hidden_states]
            self._matrix = T.concat(rows, axis=0)
        return self._matrix


class ContextEncoder:
    def __init__(self, params, cfg):
        self.params = params
        self.cfg = cfg
        self.cell = GruCell(params, "encoder.gru")

    @staticmethod
    def declare(params, cfg, rng):
        GruCell.declare(params, "encoder.gru", cfg.emb_size, cfg.hidden_size, rng)
        params.weight("encoder.fuse.Wu", (cfg.hidden_size, cfg.hidden_size), rng)
        params.weight("encoder.fuse.Wb", (cfg.n_belief, cfg.hidden_size), rng)
        params.weight("encoder.fuse.Wd", (cfg.n_db, cfg.hidden_size), rng)
        params.bias("encoder.fuse.b", (cfg.hidden_size,))

    def encode_utterance(self, token_ids):
        """Run the cell over the tokens. Returns (hidden_states, final_state)."""
        ids = list(token_ids)
        if len(ids) == 0:
            raise ValueError("cannot encode an empty utterance")
        if len(ids) > self.cfg.max_src_len:
            raise ValueError(f"utterance length {len(ids)} exceeds the {self.cfg.max_src_len} cap")
        table = self.params["embedding"]
        h = Tensor(np.zeros(self.cfg.hidden_size))
        states = []
        for tok in ids:
            x = T.embedding(table, np.asarray(int(tok)))
            h = self.cell.step(x, h)
            states.append(h)
        return states, h

    def fuse_context(self, final_state, belief, db):
        """tanh affine blend of final hidden state, belief bits, db bits."""
        belief = np.asarray(belief, dtype=np.float64)
        db = np.asarray(db, dtype=np.float64)
        if belief.shape != (self.cfg.n_belief,):
            raise ValueError(f"belief vector must have length {self.cfg.n_belief}")
        if db.shape != (self.cfg.n_db,):
            raise ValueError(f"db vector must have length {self.cfg.n_db}")
        p = self.params
        pre = (final_state @ p["encoder.fuse.Wu"]
               + Tensor(belief) @ p["encoder.fuse.Wb"]
               + Tensor(db) @ p["encoder.fuse.Wd"]
               + p["encoder.fuse.b"])
        return T.tanh(pre)

    def encode(self, sample):
        states, final = self.encode_utterance(sample.utterance_ids)
        x = self.fuse_context(final, sample.belief, sample.db)
        return EncoderOutput(hidden_states=states, final_state=final, context_vector=x)
