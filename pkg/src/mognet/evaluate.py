"""Model evaluation over a corpus split.

Requirements for Inform and Success are recovered from the gold response via
the slot inventory in the corpus meta: a domain counts as active when its
entity token appears in the gold, and its requestable attribute counts as
requested when that token appears too. This works identically under both
partition modes since it never looks at intent labels.
"""

from __future__ import annotations

import numpy as np

from .chair import MixtureFlags
from .corpus import BOS_ID, EOS_ID, PAD_ID
from .expert import FORCED
from .metrics import EvalRecord, MetricsReport, evaluate_records

STRIP_IDS = frozenset((PAD_ID, BOS_ID, EOS_ID))


def candidate_tokens(token_ids, vocab):
    return vocab.decode([t for t in token_ids if t not in STRIP_IDS])


def requirements(sample, meta):
    """(required entity tokens, requested attribute tokens) from the gold."""
    slots = meta["slots"]
    gold = set(sample.response_tokens)
    entities = frozenset(s["entity"] for s in slots.values() if s["entity"] in gold)
    requested = frozenset(s["requestable"] for s in slots.values()
                          if s["entity"] in gold and s["requestable"] in gold)
    return entities, requested


def generation_records(model, samples, vocab, meta, flags=MixtureFlags(),
                       compute_ppl=False, gold=False):
    """Build one EvalRecord per sample. gold=True scores the references
    against themselves (BLEU, inform, success all hit 1)."""
    records = []
    for s in samples:
        if gold:
            cand = list(s.response_tokens)
        else:
            out = model.generate(s, flags)
            cand = candidate_tokens(out.tokens, vocab)
        probs = None
        if compute_ppl:
            mix_probs, _ = model.teacher_forced_probs(s, flags)
            probs = mix_probs
        ent, req = requirements(s, meta)
        records.append(EvalRecord(candidate=cand, reference=list(s.response_tokens),
                                  required_entities=ent, requested_attributes=req,
                                  token_probs=probs))
    return records


def score_split(model, samples, vocab, meta, flags=MixtureFlags(),
                compute_ppl=False) -> MetricsReport:
    return evaluate_records(generation_records(
        model, samples, vocab, meta, flags, compute_ppl=compute_ppl))


def make_score_fn(vocab, meta):
    """Validation scorer for train(): Score needs no perplexity pass."""
    def score_fn(model, samples, flags):
        return score_split(model, samples, vocab, meta, flags).score
    return score_fn


def expert_slice_ppl(model, samples, partition):
    """ppl[l, m]: perplexity of expert l's forced rollouts over intent slice m.

    A specialized expert should sit on the diagonal: lowest perplexity on its
    own slice. Multi-intent samples contribute to every slice they belong to."""
    k = partition.k
    nll = np.zeros((k, k))
    count = np.zeros((k, k))
    for s in samples:
        rows = [partition.index(i) for i in s.intents]
        target = list(s.target_ids)
        enc = model.encode(s)
        for l, ex in enumerate(model.experts):
            cache = ex.rollout(enc, FORCED, forced_tokens=target, max_len=len(target))
            logp = sum(np.log(cache.dists[j].data[tok] + 1e-12)
                       for j, tok in enumerate(target))
            for m in rows:
                nll[l, m] -= logp
                count[l, m] += len(target)
    if np.any(count == 0):
        raise ValueError("some intent slice has no samples")
    return np.exp(nll / count)
