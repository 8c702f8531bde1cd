"""Synthetic intent-partitioned dialogue corpus.

A small template grammar over three domains (hotel, restaurant, taxi).
Every domain owns one entity slot token and one requestable slot token
plus a handful of exclusive content words, which keeps the per-intent
response token distributions far apart (pairwise KL above 0.5 nats).
Records carry the user utterance, belief bits (per domain: active,
requested), database bits (per domain: available), intent labels, and the
gold response. Responses always contain each active domain's entity token
and, when the user requested it (probability 0.8), the requestable token.

Partition modes label intents either by domain or by response action
(inform / recommend / book); the rest of the record is identical.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

PAD, BOS, EOS, UNK = "[PAD]", "[BOS]", "[EOS]", "[UNK]"
SPECIALS = [PAD, BOS, EOS, UNK]
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

DOMAIN_WORDS = {
    "hotel": {"noun": "hotel", "adj": "cheap", "entity": "[hotel_name]", "requestable": "[hotel_phone]"},
    "restaurant": {"noun": "restaurant", "adj": "tasty", "entity": "[restaurant_name]",
                   "requestable": "[restaurant_phone]"},
    "taxi": {"noun": "taxi", "adj": "fast", "entity": "[taxi_id]", "requestable": "[taxi_phone]"},
}
SHARED_WORDS = ["i", "you", "me", "a", "the", "is", "for", "what", "please",
                "number", "need", "want", "find", "recommend", "book"]
VALUE_WORDS = ["[value_time]"]
ACTIONS = ["inform", "recommend", "book"]

REQUEST_PROB = 0.8
AVAILABLE_PROB = 0.9


class Vocab:
    def __init__(self, tokens):
        self.tokens = list(tokens)
        self._index = {t: i for i, t in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ValueError("duplicate vocabulary tokens")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def id(self, token):
        return self._index.get(token, UNK_ID)

    def encode(self, tokens):
        return [self.id(t) for t in tokens]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    def save(self, path):
        _atomic_write(path, "".join(t + "\n" for t in self.tokens))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.strip()])


@dataclass
class DialogueContext:
    """One training sample in index space. target_ids ends with EOS."""

    utterance_ids: list
    belief: np.ndarray
    db: np.ndarray
    intents: tuple
    target_ids: list
    utterance_tokens: list = field(default_factory=list)
    response_tokens: list = field(default_factory=list)


class ToyGrammar:
    def __init__(self, domains=("hotel", "restaurant", "taxi"), vocab_size=40,
                 multi_intent_rate=0.674, max_target_len=12, max_src_len=16,
                 noise_rate=0.1):
        unknown = [d for d in domains if d not in DOMAIN_WORDS]
        if unknown:
            raise ValueError(f"no template inventory for domains {unknown}")
        if not 0.0 <= multi_intent_rate <= 1.0:
            raise ValueError("multi_intent_rate must lie in [0, 1]")
        self.domains = list(domains)
        self.multi_intent_rate = multi_intent_rate
        self.max_target_len = max_target_len
        self.max_src_len = max_src_len
        self.noise_rate = noise_rate

        base = list(SPECIALS) + list(SHARED_WORDS)
        for d in self.domains:
            w = DOMAIN_WORDS[d]
            base += [w["noun"], w["adj"], w["entity"], w["requestable"]]
        base += VALUE_WORDS
        if vocab_size < len(base):
            raise ValueError(f"vocab_size {vocab_size} is below the {len(base)} grammar tokens")
        fillers = [f"filler_{i}" for i in range(vocab_size - len(base))]
        self.fillers = fillers
        self.vocab = Vocab(base + fillers)

    @property
    def slots(self):
        return {d: {"entity": DOMAIN_WORDS[d]["entity"],
                    "requestable": DOMAIN_WORDS[d]["requestable"]}
                for d in self.domains}

    def intent_labels(self, partition):
        if partition == "domain":
            return list(self.domains)
        if partition == "action":
            return list(ACTIONS)
        raise ValueError(f"unknown partition mode {partition!r}")

    # -- templates -------------------------------------------------------------

    def _user_segment(self, d, rng, compact):
        w = DOMAIN_WORDS[d]
        full = [
            ["i", "need", "a", w["noun"], "please"],
            ["find", "me", "a", w["adj"], w["noun"]],
            ["i", "want", "a", w["noun"], "for", "[value_time]"],
            ["what", "is", "the", w["adj"], w["noun"]],
        ]
        pool = full[:2] if compact else full
        return list(pool[rng.integers(len(pool))])

    def _response_segment(self, d, action, requested, compact):
        w = DOMAIN_WORDS[d]
        if compact:
            if requested:
                return [w["entity"], "number", "is", w["requestable"]]
            return ["the", w["entity"], "is", "a", w["noun"]]
        if action == "inform":
            seg = ["the", w["entity"], "is", "a", w["adj"], w["noun"]]
        elif action == "recommend":
            seg = ["i", "recommend", "the", w["entity"], "for", "you"]
        else:
            seg = ["i", "book", "the", w["entity"], "for", "[value_time]"]
        if requested:
            seg = seg + ["the", "number", "is", w["requestable"]]
        return seg

    # -- sampling ----------------------------------------------------------------

    def sample(self, rng):
        multi = len(self.domains) > 1 and rng.random() < self.multi_intent_rate
        n_dom = 2 if multi else 1
        picked = sorted(rng.choice(len(self.domains), size=n_dom, replace=False).tolist())
        doms = [self.domains[i] for i in picked]
        requested = {d: rng.random() < REQUEST_PROB for d in doms}
        available = {d: rng.random() < AVAILABLE_PROB for d in doms}

        utter, resp, actions = [], [], []
        for d in doms:
            utter += self._user_segment(d, rng, compact=multi)
            if requested[d]:
                utter += ["the", "number", "please"]
            if multi:
                action = "inform"
            else:
                action = ACTIONS[rng.integers(len(ACTIONS))]
            actions.append(action)
            resp += self._response_segment(d, action, requested[d], compact=multi)

        if self.fillers and rng.random() < self.noise_rate and len(utter) < self.max_src_len:
            filler = self.fillers[rng.integers(len(self.fillers))]
            utter.insert(int(rng.integers(len(utter) + 1)), filler)

        assert len(utter) <= self.max_src_len, "grammar produced an oversized utterance"
        assert len(resp) <= self.max_target_len - 1, "grammar produced an oversized response"
        for d in doms:
            assert DOMAIN_WORDS[d]["entity"] in resp

        belief, db = [], []
        for d in self.domains:
            on = d in doms
            belief += [1 if on else 0, 1 if (on and requested[d]) else 0]
            db.append(1 if (on and available[d]) else 0)
        return {
            "utterance": utter,
            "belief": belief,
            "db": db,
            "intents_domain": doms,
            "intents_action": sorted(set(actions)),
            "response": resp,
        }

    def generate(self, n, seed, partition="domain"):
        labels = self.intent_labels(partition)
        key = "intents_domain" if partition == "domain" else "intents_action"
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 303]))
        records = []
        for _ in range(n):
            raw = self.sample(rng)
            records.append({
                "utterance": raw["utterance"],
                "belief": raw["belief"],
                "db": raw["db"],
                "intents": raw[key],
                "response": raw["response"],
            })
        return records, labels


def split_records(records, ratio=(0.8438, 0.10, 0.10)):
    """Partition into train/valid/test following the normalized ratio."""
    if len(ratio) != 3 or min(ratio) < 0 or sum(ratio) <= 0:
        raise ValueError("split ratio must be three non-negative shares")
    n = len(records)
    total = sum(ratio)
    n_train = int(round(n * ratio[0] / total))
    n_valid = int(round(n * ratio[1] / total))
    n_train = min(n_train, n)
    n_valid = min(n_valid, n - n_train)
    return records[:n_train], records[n_train:n_train + n_valid], records[n_train + n_valid:]


# -- statistics ---------------------------------------------------------------


def intent_token_distributions(records, vocab, smoothing=1.0):
    """Per-intent response unigram distributions with add-one smoothing."""
    intents = sorted({i for r in records for i in r["intents"]})
    counts = {i: np.zeros(len(vocab)) for i in intents}
    for r in records:
        ids = vocab.encode(r["response"])
        for i in r["intents"]:
            np.add.at(counts[i], ids, 1.0)
    dists = {}
    for i in intents:
        c = counts[i] + smoothing
        dists[i] = c / c.sum()
    return dists


def kl_divergence(p, q):
    return float(np.sum(p * np.log(p / q)))


def corpus_stats(records, vocab):
    """Pairwise KL matrix of the per-intent response distributions. Warns
    when two intents are nearly indistinguishable (min off-diagonal < 0.5).

    Separation is measured on single-intent records: a multi-intent response
    deliberately interleaves segments from every member intent, so attributing
    it whole to each one would blur exactly the distinction being checked."""
    singles = [r for r in records if len(r["intents"]) == 1]
    dists = intent_token_distributions(singles or records, vocab)
    intents = sorted(dists)
    k = len(intents)
    kl = np.zeros((k, k))
    for a in range(k):
        for b in range(k):
            if a != b:
                kl[a, b] = kl_divergence(dists[intents[a]], dists[intents[b]])
    if k > 1:
        off = kl[~np.eye(k, dtype=bool)]
        if off.min() < 0.5:
            warnings.warn("intent token distributions are nearly identical "
                          f"(min pairwise KL {off.min():.3f} nats)", stacklevel=2)
    return {
        "intents": intents,
        "kl_matrix": kl.tolist(),
        "min_offdiag_kl": float(kl[~np.eye(k, dtype=bool)].min()) if k > 1 else 0.0,
        "n_records": len(records),
        "multi_intent_fraction": float(np.mean([len(r["intents"]) > 1 for r in records])),
    }


# -- files ---------------------------------------------------------------------


@dataclass
class CorpusSplits:
    train: list
    valid: list
    test: list
    vocab: Vocab
    meta: dict

    def raw(self, split):
        return {"train": self._raw_train, "valid": self._raw_valid, "test": self._raw_test}[split]


def _atomic_write(path, text):
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _dump_records(records):
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n"
                   for r in records)


def write_corpus(out_dir, grammar, seed, partition="domain", n=3000,
                 ratio=(0.8438, 0.10, 0.10), extra_meta=None):
    """Generate, split, and write a corpus directory. Fully deterministic in
    (grammar config, seed): identical inputs give byte-identical files."""
    os.makedirs(out_dir, exist_ok=True)
    records, labels = grammar.generate(n, seed, partition)
    train, valid, test = split_records(records, ratio)
    meta = {
        "partition": partition,
        "intents": labels,
        "domains": grammar.domains,
        "slots": grammar.slots,
        "n_belief": 2 * len(grammar.domains),
        "n_db": len(grammar.domains),
        "max_target_len": grammar.max_target_len,
        "max_src_len": grammar.max_src_len,
        "multi_intent_rate": grammar.multi_intent_rate,
        "seed": int(seed),
        "counts": {"train": len(train), "valid": len(valid), "test": len(test)},
    }
    if extra_meta:
        meta.update(extra_meta)
    stats = corpus_stats(records, grammar.vocab)
    for name, recs in (("train", train), ("valid", valid), ("test", test)):
        _atomic_write(os.path.join(out_dir, f"{name}.jsonl"), _dump_records(recs))
    grammar.vocab.save(os.path.join(out_dir, "vocab.txt"))
    _atomic_write(os.path.join(out_dir, "meta.json"),
                  json.dumps(meta, sort_keys=True, indent=1) + "\n")
    _atomic_write(os.path.join(out_dir, "stats.json"),
                  json.dumps(stats, sort_keys=True, indent=1) + "\n")
    return meta, stats


def to_context(record, vocab):
    return DialogueContext(
        utterance_ids=vocab.encode(record["utterance"]),
        belief=np.asarray(record["belief"], dtype=np.float64),
        db=np.asarray(record["db"], dtype=np.float64),
        intents=tuple(record["intents"]),
        target_ids=vocab.encode(record["response"]) + [EOS_ID],
        utterance_tokens=list(record["utterance"]),
        response_tokens=list(record["response"]),
    )


def load_corpus(corpus_dir):
    vocab = Vocab.load(os.path.join(corpus_dir, "vocab.txt"))
    with open(os.path.join(corpus_dir, "meta.json"), encoding="utf-8") as f:
        meta = json.load(f)
    splits = {}
    raw = {}
    for name in ("train", "valid", "test"):
        path = os.path.join(corpus_dir, f"{name}.jsonl")
        records = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    records.append(json.loads(line))
        raw[name] = records
        splits[name] = [to_context(r, vocab) for r in records]
    cs = CorpusSplits(train=splits["train"], valid=splits["valid"], test=splits["test"],
                      vocab=vocab, meta=meta)
    cs._raw_train, cs._raw_valid, cs._raw_test = raw["train"], raw["valid"], raw["test"]
    return cs
