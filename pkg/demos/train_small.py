"""Generate a small corpus, train for a few epochs, and score the result.

Everything is driven by (config, seed): rerunning this script reproduces the
same corpus bytes, the same loss curve, and the same report."""

import os
import tempfile

import numpy as np

from mognet import (IntentPartition, MoGNet, RunConfig, load_corpus, score_split,
                    train, write_corpus)
from mognet.evaluate import candidate_tokens, make_score_fn

# sized to show real learning in about a minute of wall time
cfg = RunConfig({"corpus.n_samples": 1200, "model.emb_size": 6,
                 "model.hidden_size": 12, "train.epochs": 14,
                 "train.batch_size": 32})
workdir = tempfile.mkdtemp(prefix="mognet-demo-")
corpus_dir = os.path.join(workdir, "corpus")

write_corpus(corpus_dir, cfg.grammar(), seed=0,
             partition=cfg["corpus.partition"], n=cfg["corpus.n_samples"],
             ratio=cfg.split_ratio())
splits = load_corpus(corpus_dir)
print("corpus:", {k: len(getattr(splits, k)) for k in ("train", "valid", "test")},
      "vocab", len(splits.vocab))

partition = IntentPartition(splits.meta["intents"])
model = MoGNet(cfg.model_config(len(splits.vocab), partition.k,
                                splits.meta["n_belief"], splits.meta["n_db"]),
               seed=0)
result = train(splits, model, partition, cfg.loss_config("mognet"),
               cfg.optimizer_config(), epochs=cfg["train.epochs"], seed=0,
               score_fn=make_score_fn(splits.vocab, splits.meta), log_fn=print)

model.params.load_state(result.best_state)
report = score_split(model, splits.test, splits.vocab, splits.meta,
                     compute_ppl=True)
print("\ntest:", report.line())

# a few generations next to their references
for sample in splits.test[:4]:
    out = model.generate(sample)
    print("  gold:", " ".join(sample.response_tokens))
    print("  got :", " ".join(candidate_tokens(out.tokens, splits.vocab)))
