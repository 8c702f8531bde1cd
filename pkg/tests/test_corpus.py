import json
import os

import numpy as np
import pytest

from mognet.corpus import (EOS_ID, UNK_ID, ToyGrammar, Vocab, corpus_stats,
                           intent_token_distributions, kl_divergence, load_corpus,
                           split_records, to_context, write_corpus)

# n=3000 at the default (0.8438, 0.10, 0.10) ratio, normalized by its sum
SPLIT_COUNTS = (2425, 287, 288)


class TestVocab:
    def test_roundtrip(self, tmp_path):
        v = Vocab(["[PAD]", "[BOS]", "[EOS]", "[UNK]", "x"])
        v.save(tmp_path / "vocab.txt")
        w = Vocab.load(tmp_path / "vocab.txt")
        assert w.tokens == v.tokens

    def test_unknown_token_maps_to_unk(self):
        v = Vocab(["[PAD]", "[BOS]", "[EOS]", "[UNK]", "x"])
        assert v.encode(["x", "zzz"]) == [4, UNK_ID]

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            Vocab(["a", "a"])


class TestGrammar:
    def test_vocab_size_is_exact(self):
        assert len(ToyGrammar(vocab_size=40).vocab) == 40
        assert len(ToyGrammar(vocab_size=64).vocab) == 64

    def test_too_small_vocab_rejected(self):
        with pytest.raises(ValueError):
            ToyGrammar(vocab_size=31)

    def test_unknown_domain_rejected(self):
        with pytest.raises(ValueError):
            ToyGrammar(domains=("hotel", "museum"))

    def test_responses_contain_active_entities(self):
        g = ToyGrammar()
        records, _ = g.generate(400, seed=11)
        for r in records:
            for d in r["intents"]:
                assert g.slots[d]["entity"] in r["response"]

    def test_requested_bit_implies_requestable_token(self):
        g = ToyGrammar()
        records, _ = g.generate(400, seed=11)
        for r in records:
            for i, d in enumerate(g.domains):
                if r["belief"][2 * i + 1]:
                    assert g.slots[d]["requestable"] in r["response"]

    def test_length_caps_hold(self):
        g = ToyGrammar()
        records, _ = g.generate(1000, seed=3)
        assert max(len(r["utterance"]) for r in records) <= g.max_src_len
        assert max(len(r["response"]) for r in records) <= g.max_target_len - 1

    def test_zero_rate_means_all_single_intent(self):
        g = ToyGrammar(multi_intent_rate=0.0)
        records, _ = g.generate(300, seed=2)
        assert all(len(r["intents"]) == 1 for r in records)

    def test_multi_intent_fraction_near_rate(self):
        g = ToyGrammar(multi_intent_rate=0.674)
        records, _ = g.generate(3000, seed=7)
        frac = np.mean([len(r["intents"]) > 1 for r in records])
        assert 0.64 <= frac <= 0.71

    def test_action_partition_relabels_only(self):
        g = ToyGrammar()
        dom, _ = g.generate(100, seed=5, partition="domain")
        act, labels = g.generate(100, seed=5, partition="action")
        assert labels == ["inform", "recommend", "book"]
        for rd, ra in zip(dom, act):
            assert rd["utterance"] == ra["utterance"]
            assert rd["response"] == ra["response"]
            assert set(ra["intents"]) <= set(labels)


class TestSplits:
    def test_default_ratio_counts(self):
        records = list(range(3000))
        train, valid, test = split_records(records)
        assert (len(train), len(valid), len(test)) == SPLIT_COUNTS

    def test_partition_is_exact_and_ordered(self):
        train, valid, test = split_records(list(range(10)), (0.6, 0.2, 0.2))
        assert train + valid + test == list(range(10))

    def test_bad_ratio_rejected(self):
        with pytest.raises(ValueError):
            split_records([1], (0.5, 0.5))
        with pytest.raises(ValueError):
            split_records([1], (0.0, 0.0, 0.0))


class TestStats:
    def test_default_grammar_intents_are_separable(self):
        g = ToyGrammar()
        records, _ = g.generate(3000, seed=7)
        stats = corpus_stats(records, g.vocab)
        kl = np.asarray(stats["kl_matrix"])
        off = kl[~np.eye(3, dtype=bool)]
        assert off.min() > 0.5
        assert np.all(np.diag(kl) == 0)

    def test_single_intent_grammar_gives_1x1_zero(self):
        g = ToyGrammar(domains=("hotel",))
        records, _ = g.generate(200, seed=1)
        stats = corpus_stats(records, g.vocab)
        assert stats["kl_matrix"] == [[0.0]]

    def test_indistinguishable_intents_warn(self):
        g = ToyGrammar()
        records = [{"intents": ["a"], "response": ["the", "hotel"]},
                   {"intents": ["b"], "response": ["the", "hotel"]}]
        with pytest.warns(UserWarning):
            corpus_stats(records, g.vocab)

    def test_kl_divergence_basics(self):
        p = np.array([0.5, 0.5])
        q = np.array([0.9, 0.1])
        assert kl_divergence(p, p) == 0.0
        assert kl_divergence(p, q) > 0.0

    def test_distributions_are_smoothed(self):
        g = ToyGrammar()
        records = [{"intents": ["a"], "response": ["hotel"]}]
        dists = intent_token_distributions(records, g.vocab)
        assert np.all(dists["a"] > 0)
        assert abs(dists["a"].sum() - 1.0) < 1e-12


class TestCorpusFiles:
    def test_write_then_load_roundtrip(self, tmp_path):
        g = ToyGrammar()
        meta, stats = write_corpus(tmp_path, g, seed=7, n=300)
        cs = load_corpus(tmp_path)
        assert cs.meta["counts"] == meta["counts"]
        assert len(cs.train) == meta["counts"]["train"]
        assert len(cs.vocab) == 40
        for c in cs.train[:20]:
            assert c.target_ids[-1] == EOS_ID
            assert max(c.utterance_ids) < 40
            assert len(c.belief) == 6 and len(c.db) == 3

    def test_same_seed_byte_identical_files(self, tmp_path):
        files = ("train.jsonl", "valid.jsonl", "test.jsonl",
                 "vocab.txt", "meta.json", "stats.json")
        write_corpus(tmp_path / "a", ToyGrammar(), seed=7, n=500)
        write_corpus(tmp_path / "b", ToyGrammar(), seed=7, n=500)
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_different_seed_changes_content(self, tmp_path):
        write_corpus(tmp_path / "a", ToyGrammar(), seed=7, n=400)
        write_corpus(tmp_path / "b", ToyGrammar(), seed=8, n=400)
        assert (tmp_path / "a" / "train.jsonl").read_bytes() \
            != (tmp_path / "b" / "train.jsonl").read_bytes()

    def test_meta_records_grammar_shape(self, tmp_path):
        meta, _ = write_corpus(tmp_path, ToyGrammar(), seed=1, n=400,
                               extra_meta={"config_hash": "abc"})
        assert meta["n_belief"] == 6 and meta["n_db"] == 3
        assert meta["intents"] == ["hotel", "restaurant", "taxi"]
        assert meta["config_hash"] == "abc"
        on_disk = json.loads((tmp_path / "meta.json").read_text())
        assert on_disk == meta

    def test_to_context_tokenizes_with_unk(self):
        g = ToyGrammar()
        record = {"utterance": ["i", "zzz"], "belief": [1, 0, 0, 0, 0, 0],
                  "db": [1, 0, 0], "intents": ["hotel"], "response": ["the", "hotel"]}
        c = to_context(record, g.vocab)
        assert c.utterance_ids[1] == UNK_ID
        assert c.target_ids == g.vocab.encode(["the", "hotel"]) + [EOS_ID]
