import numpy as np
import pytest
from hypothesis import given, strategies as st

from unionrank.tokenizer import TokenSequence
from unionrank.union import (
    attention_mask_for_item,
    build_union,
    compression_factor,
    overlap_stats,
)


def seq(*ids):
    return TokenSequence(tuple(ids))


class TestBuildUnion:
    def test_two_overlapping_items(self):
        enc = build_union([seq(5, 7), seq(7, 9)], seq(2, 3), union_budget=10)
        assert enc.union_ids == (5, 7, 9)
        # layout: q q | sep | union
        np.testing.assert_array_equal(enc.item_masks[0],
                                      [1, 1, 1, 1, 1, 0])
        np.testing.assert_array_equal(enc.item_masks[1],
                                      [1, 1, 1, 0, 1, 1])

    def test_single_item_sorted(self):
        enc = build_union([seq(9, 4, 6)], seq(1), union_budget=10)
        assert enc.union_ids == (4, 6, 9)
        np.testing.assert_array_equal(enc.union_span_mask(0), [1, 1, 1])

    def test_duplicate_items_identical_masks(self):
        enc = build_union([seq(4), seq(4)], seq(), union_budget=10)
        assert enc.union_ids == (4,)
        np.testing.assert_array_equal(enc.item_masks[0], enc.item_masks[1])

    def test_all_items_empty_is_warning_not_failure(self):
        enc = build_union([seq(), seq()], seq(8), union_budget=4)
        assert enc.union_ids == ()
        assert enc.item_masks.shape == (2, 2)  # query + [SEP] only
        np.testing.assert_array_equal(enc.item_masks, 1.0)

    def test_truncation_keeps_smallest_ids_and_reports(self):
        enc = build_union([seq(10, 11), seq(12, 10)], seq(), union_budget=2)
        assert enc.union_ids == (10, 11)
        assert enc.truncation_report == (0, 1)
        # item 2 keeps only token 10
        np.testing.assert_array_equal(enc.union_span_mask(1), [1, 0])

    def test_item_positions_first_occurrence(self):
        enc = build_union([seq(9, 5, 9)], seq(1), union_budget=10)
        assert enc.item_positions[0] == {9: 0, 5: 1}

    def test_popcount_matches_intersection(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            items = [seq(*rng.integers(4, 30, size=rng.integers(1, 9)))
                     for _ in range(4)]
            enc = build_union(items, seq(2), union_budget=50)
            for j, item in enumerate(items):
                expect = len(set(enc.union_ids) & set(item.ids))
                assert enc.union_span_mask(j).sum() == expect

    def test_rejects_empty_item_list(self):
        with pytest.raises(ValueError):
            build_union([], seq(1), union_budget=4)


class TestAttentionMask:
    def test_item_covering_union(self):
        mask = attention_mask_for_item(seq(1), (5, 7), seq(7, 5))
        np.testing.assert_array_equal(mask, [1, 1, 1, 1])

    def test_disjoint_item(self):
        mask = attention_mask_for_item(seq(1), (5, 7), seq(9))
        np.testing.assert_array_equal(mask, [1, 1, 0, 0])

    def test_partial_membership(self):
        mask = attention_mask_for_item(seq(), (5, 7, 9), seq(9, 5))
        np.testing.assert_array_equal(mask, [1, 1, 0, 1])


@given(st.lists(st.lists(st.integers(4, 40), min_size=0, max_size=8),
                min_size=1, max_size=5),
       st.permutations(range(5)))
def test_union_invariant_to_item_order_and_shuffles(raw_items, perm):
    items = [seq(*ids) for ids in raw_items]
    base = build_union(items, seq(2, 3), union_budget=6)
    # shuffle tokens inside each item: union and masks unchanged
    shuffled = [seq(*reversed(ids)) for ids in raw_items]
    enc2 = build_union(shuffled, seq(2, 3), union_budget=6)
    assert enc2.union_ids == base.union_ids
    np.testing.assert_array_equal(enc2.item_masks, base.item_masks)
    # permute the item list: masks permute identically, union unchanged
    order = [p for p in perm if p < len(items)]
    enc3 = build_union([items[i] for i in order], seq(2, 3), union_budget=6)
    assert enc3.union_ids == base.union_ids
    np.testing.assert_array_equal(enc3.item_masks, base.item_masks[order])


class TestOverlapStats:
    def test_identical_single_token_items(self):
        data = [(seq(1), [seq(7)] * 6) for _ in range(3)]
        stats = overlap_stats(data, per_item_cap=12)
        assert stats.mean_total_tokens == 6.0
        assert stats.mean_union_size == 1.0
        assert stats.ratio == 6.0

    def test_disjoint_items_ratio_one(self):
        data = [(seq(1), [seq(4, 5), seq(6, 7), seq(8, 9)])]
        stats = overlap_stats(data, per_item_cap=12)
        assert stats.ratio == 1.0

    def test_cap_applied_before_counting(self):
        data = [(seq(1), [seq(4, 5, 6, 7), seq(4, 5, 6, 7)])]
        stats = overlap_stats(data, per_item_cap=2)
        assert stats.mean_total_tokens == 4.0
        assert stats.mean_union_size == 2.0

    def test_internal_duplicates_inflate_total_only(self):
        data = [(seq(1), [seq(4, 4, 4)])]
        stats = overlap_stats(data, per_item_cap=12)
        assert stats.mean_total_tokens == 3.0
        assert stats.mean_union_size == 1.0

    def test_zero_item_queries_skipped_and_tallied(self):
        data = [(seq(1), []), (seq(1), [seq(4)])]
        stats = overlap_stats(data, per_item_cap=12)
        assert stats.skipped_queries == 1
        assert stats.mean_total_tokens == 1.0

    def test_brute_force_agreement_exhaustive(self):
        # every corpus of up to 3 queries x up to 4 items over ids 4..7
        rng = np.random.default_rng(9)
        for _ in range(50):
            data = []
            for _ in range(rng.integers(1, 4)):
                items = [seq(*rng.integers(4, 8, size=rng.integers(1, 5)))
                         for _ in range(rng.integers(1, 5))]
                data.append((seq(2), items))
            cap = int(rng.integers(1, 5))
            stats = overlap_stats(data, per_item_cap=cap)
            # independent brute force
            ms, us = [], []
            for _, items in data:
                toks = [list(it.ids)[:cap] for it in items]
                ms.append(sum(len(t) for t in toks))
                us.append(len({x for t in toks for x in t}))
            assert stats.mean_total_tokens == pytest.approx(np.mean(ms))
            assert stats.mean_union_size == pytest.approx(np.mean(us))

    def test_csv_row(self):
        stats = overlap_stats([(seq(1), [seq(4)])], per_item_cap=3)
        row = stats.csv_row(3)
        assert row.startswith("3,1.000000,1.000000,1.000000,0")


class TestCompressionFactor:
    def test_reference_values(self):
        assert compression_factor(24, 100, 220) == pytest.approx(10.909, abs=1e-3)

    def test_disjoint_items(self):
        assert compression_factor(5, 4, 20) == 1.0

    def test_identical_items(self):
        assert compression_factor(5, 4, 5) == 4.0

    def test_zero_union_rejected(self):
        with pytest.raises(ValueError):
            compression_factor(5, 4, 0)
