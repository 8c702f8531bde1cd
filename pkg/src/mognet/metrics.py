"""Task-completion and fluency metrics for generated responses.

Inform is the fraction of responses containing every required entity token,
Success the fraction answering every requested attribute token, BLEU the
corpus-level 4-gram overlap with brevity penalty, and the composite

    score = (0.5 * inform + 0.5 * success + bleu) * 100

combines them. Perplexity is exp of the mean token negative log likelihood
under teacher forcing.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .tensor import EPS_LOG


def ngram_counts(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(candidates, references, max_n: int = 4):
    """Corpus-level BLEU with uniform n-gram weights and brevity penalty.

    Clipped n-gram matches and totals are pooled over the whole corpus before
    taking precisions. Any empty precision level sends the score to zero."""
    if len(candidates) != len(references):
        raise ValueError("candidate/reference counts differ")
    if not candidates:
        raise ValueError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            cc = ngram_counts(cand, n)
            rc = ngram_counts(ref, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in cc.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    if any(m == 0 or t == 0 for m, t in zip(matches, totals)):
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    if cand_len > ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / cand_len) if cand_len > 0 else 0.0
    return bp * math.exp(log_prec)


def _covers(tokens, needed):
    return set(needed) <= set(tokens)


def inform_rate(candidates, required_entities):
    """Fraction of responses containing all of their required entity tokens."""
    if len(candidates) != len(required_entities):
        raise ValueError("candidate/requirement counts differ")
    if not candidates:
        raise ValueError("empty corpus")
    return float(np.mean([_covers(c, r) for c, r in zip(candidates, required_entities)]))


def success_rate(candidates, requested_attributes):
    """Fraction of responses answering all of their requested attributes."""
    if len(candidates) != len(requested_attributes):
        raise ValueError("candidate/requirement counts differ")
    if not candidates:
        raise ValueError("empty corpus")
    return float(np.mean([_covers(c, r) for c, r in zip(candidates, requested_attributes)]))


def score(inform, success, bleu):
    for name, v in (("inform", inform), ("success", success), ("bleu", bleu)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return (0.5 * inform + 0.5 * success + bleu) * 100.0


def perplexity(token_probs):
    """exp of the mean negative log likelihood over all tokens.

    Zero probabilities are clamped by the log guard rather than producing
    inf, but they signal a broken model, so each occurrence is warned about."""
    p = np.asarray(token_probs, dtype=np.float64)
    if p.size == 0:
        raise ValueError("no token probabilities")
    if p.min() < 0.0 or p.max() > 1.0 + 1e-9:
        raise ValueError("token probabilities must lie in [0, 1]")
    n_zero = int(np.count_nonzero(p == 0.0))
    if n_zero:
        warnings.warn(f"{n_zero} zero-probability tokens hit the log guard")
    return float(np.exp(-np.mean(np.log(p + EPS_LOG))))


@dataclass
class MetricsReport:
    bleu: float
    inform: float
    success: float
    score: float
    ppl: float
    n_records: int

    def line(self):
        return (f"bleu={self.bleu:.4f} inform={self.inform:.4f} "
                f"success={self.success:.4f} score={self.score:.2f} "
                f"ppl={self.ppl:.4f} n={self.n_records}")


@dataclass
class EvalRecord:
    """Everything the metrics need about one response."""

    candidate: list
    reference: list
    required_entities: frozenset
    requested_attributes: frozenset
    token_probs: np.ndarray | None = None


def evaluate_records(records) -> MetricsReport:
    cands = [r.candidate for r in records]
    refs = [r.reference for r in records]
    b = corpus_bleu(cands, refs)
    i = inform_rate(cands, [r.required_entities for r in records])
    s = success_rate(cands, [r.requested_attributes for r in records])
    probs = [p for r in records if r.token_probs is not None for p in r.token_probs]
    ppl = perplexity(probs) if probs else float("nan")
    return MetricsReport(bleu=b, inform=i, success=s, score=score(i, s, b),
                         ppl=ppl, n_records=len(records))


def write_report(path, report: MetricsReport, extra=None):
    payload = asdict(report)
    if extra:
        payload.update(extra)
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")
    os.replace(tmp, path)


def read_report(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)
