import json

import numpy as np
import pytest

from unionrank.data import (
    load_dataset,
    synthesize_dataset,
    write_jsonl,
)
from unionrank.tokenizer import build_vocab, tokenize
from unionrank.union import overlap_stats


def _vocab_for(rows):
    texts = []
    for row in rows:
        texts.append(row["query"])
        texts.extend(row["items"])
    return build_vocab(texts, max_size=10000)


class TestLoadDataset:
    def test_well_formed_line(self, tmp_path):
        rows = [{"query": "red shoes", "items": ["red boots", "blue hat",
                                                 "red shoes sale"],
                 "labels": [0.8, 0.1, 0.9]}]
        path = tmp_path / "data.jsonl"
        write_jsonl(rows, path)
        vocab = _vocab_for(rows)
        result = load_dataset(path, vocab)
        assert len(result) == 1
        inst = result.instances[0]
        assert inst.n_items == 3
        np.testing.assert_array_equal(inst.targets, [0.8, 0.1, 0.9])
        assert inst.query.ids == tokenize("red shoes", vocab).ids

    def test_mismatched_labels_rejected_with_line_number(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text(
            json.dumps({"query": "q", "items": ["a", "b", "c"],
                        "labels": [0.1, 0.2]}) + "\n")
        result = load_dataset(path, _vocab_for([]))
        assert len(result) == 0
        assert "line 1" in result.errors[0]
        assert "3 items" in result.errors[0]

    def test_label_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text(
            json.dumps({"query": "q", "items": ["a"], "labels": [1.5]})
            + "\n")
        result = load_dataset(path, _vocab_for([]))
        assert len(result) == 0
        assert "1.5" in result.errors[0]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text("")
        result = load_dataset(path, _vocab_for([]))
        assert len(result) == 0 and result.errors == []

    def test_bad_json_line_skipped_others_kept(self, tmp_path):
        good = json.dumps({"query": "q", "items": ["a"], "labels": [0.5]})
        path = tmp_path / "data.jsonl"
        path.write_text("{broken\n" + good + "\n")
        result = load_dataset(path, _vocab_for([]))
        assert len(result) == 1
        assert "line 1" in result.errors[0]

    def test_strict_mode_raises(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text("{broken\n")
        with pytest.raises(ValueError, match="line 1"):
            load_dataset(path, _vocab_for([]), strict=True)


def _stats_for_rows(rows, cap=32):
    vocab = _vocab_for(rows)
    data = [(tokenize(r["query"], vocab),
             [tokenize(t, vocab) for t in r["items"]]) for r in rows]
    return overlap_stats(data, per_item_cap=cap)


class TestSynthesize:
    def test_identical_items_ratio_exactly_n(self):
        rows = synthesize_dataset(n_queries=4, n_items=6, overlap=1.0,
                                  vocab_size=512, seed=0,
                                  planted_relevance=False)
        stats = _stats_for_rows(rows)
        assert stats.ratio == 6.0

    def test_disjoint_items_ratio_exactly_one(self):
        rows = synthesize_dataset(n_queries=4, n_items=6, overlap=0.0,
                                  vocab_size=512, seed=0,
                                  planted_relevance=False)
        assert _stats_for_rows(rows).ratio == 1.0

    def test_planted_overlap_within_ten_percent(self):
        target = 1.0 + 0.8 * 29
        rows = synthesize_dataset(n_queries=20, n_items=30, overlap=0.8,
                                  vocab_size=2048, seed=1)
        ratio = _stats_for_rows(rows).ratio
        assert abs(ratio - target) / target < 0.10

    def test_labels_respect_relevance_bands(self):
        rows = synthesize_dataset(n_queries=5, n_items=8, overlap=0.5,
                                  vocab_size=512, seed=2,
                                  relevant_per_query=2)
        for row in rows:
            labels = np.array(row["labels"])
            assert ((labels >= 0.65) & (labels <= 0.95)).sum() == 2
            assert ((labels <= 0.35)).sum() == 6

    def test_relevant_items_carry_planted_query_tokens(self):
        rows = synthesize_dataset(n_queries=6, n_items=8, overlap=0.2,
                                  vocab_size=512, seed=3,
                                  item_len=8, query_len=4,
                                  relevant_per_query=3)
        n_copy = min(4, 8 // 2)
        rel_counts, irr_counts = [], []
        for row in rows:
            qwords = set(row["query"].split())
            for text, label in zip(row["items"], row["labels"]):
                shared = len(qwords & set(text.split()))
                if label >= 0.5:
                    assert shared >= n_copy
                    rel_counts.append(shared)
                else:
                    irr_counts.append(shared)
        assert np.mean(rel_counts) > np.mean(irr_counts)

    def test_deterministic_per_seed(self):
        a = synthesize_dataset(3, 5, 0.4, 512, seed=9)
        b = synthesize_dataset(3, 5, 0.4, 512, seed=9)
        assert a == b
        c = synthesize_dataset(3, 5, 0.4, 512, seed=10)
        assert a != c

    def test_infeasible_distinct_demand_rejected(self):
        with pytest.raises(ValueError, match="infeasible"):
            synthesize_dataset(2, 4, 1.0, 512, seed=0,
                               require_distinct_items=True)

    def test_overlap_range_validated(self):
        with pytest.raises(ValueError):
            synthesize_dataset(2, 4, 1.2, 512, seed=0)

    def test_vocab_too_small_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            synthesize_dataset(2, 10, 0.0, 16, seed=0)

    def test_round_trip_through_loader(self, tmp_path):
        rows = synthesize_dataset(4, 6, 0.6, 512, seed=5)
        path = tmp_path / "synth.jsonl"
        write_jsonl(rows, path)
        vocab = _vocab_for(rows)
        result = load_dataset(path, vocab)
        assert len(result) == 4 and not result.errors
        assert all(inst.n_items == 6 for inst in result.instances)
