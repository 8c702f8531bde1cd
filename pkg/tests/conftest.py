"""Shared builders for the test suite: tiny models and hand-made samples."""

import numpy as np

from mognet.corpus import DialogueContext
from mognet.model import ModelConfig, MoGNet

TINY = dict(vocab_size=6, n_experts=2, n_belief=4, n_db=2,
            emb_size=3, hidden_size=4, max_src_len=8, max_len=6)


def tiny_config(**overrides):
    kw = dict(TINY)
    kw.update(overrides)
    return ModelConfig(**kw)


def tiny_model(seed=0, **overrides):
    return MoGNet(tiny_config(**overrides), seed=seed)


def make_sample(utterance, target, intents=("a",), belief=None, db=None,
                n_belief=4, n_db=2):
    if belief is None:
        belief = [1.0] + [0.0] * (n_belief - 1)
    if db is None:
        db = [1.0] + [0.0] * (n_db - 1)
    return DialogueContext(utterance_ids=list(utterance),
                           belief=np.asarray(belief, dtype=np.float64),
                           db=np.asarray(db, dtype=np.float64),
                           intents=tuple(intents),
                           target_ids=list(target))


def zero_params(model):
    for _, p in model.params.items():
        p.data[...] = 0.0


def randomize_params(model, rng, scale=0.3):
    for _, p in model.params.items():
        p.data[...] = rng.uniform(-scale, scale, size=p.data.shape)
