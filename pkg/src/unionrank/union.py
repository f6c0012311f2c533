"""Token-union construction and per-item selection masks.

A query's N candidate items are collapsed into one sorted, deduplicated
token sequence that the encoder reads once.  Each item keeps a binary mask
saying which union positions belong to it (plus the query span and the
[SEP] slot, which every mask selects), and the first position at which
each of its union tokens occurred in the original item text, so sequence
order can optionally be re-injected later.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .tokenizer import TokenSequence

__all__ = [
    "UnionEncoding",
    "OverlapStats",
    "build_union",
    "attention_mask_for_item",
    "overlap_stats",
    "compression_factor",
]


@dataclass(frozen=True)
class UnionEncoding:
    """Sorted union tokens plus everything needed to score each item.

    item_masks rows are laid out as [query span | [SEP] slot | union span];
    the query span and the [SEP] slot are always 1.  item_positions[j]
    maps each kept union token of item j to its first-occurrence index in
    the original (pre-sort, pre-dedup) item.  truncation_report[j] counts
    token occurrences of item j dropped by the union budget.
    """

    union_ids: tuple[int, ...]
    item_masks: np.ndarray          # (N, L_q + 1 + M) float64 of 0/1
    item_positions: tuple[dict[int, int], ...]
    truncation_report: tuple[int, ...]
    query_length: int

    @property
    def size(self) -> int:
        return len(self.union_ids)

    @property
    def n_items(self) -> int:
        return self.item_masks.shape[0]

    def union_span_mask(self, item: int) -> np.ndarray:
        """The union-span slice of one item's mask."""
        return self.item_masks[item, self.query_length + 1:]


@dataclass(frozen=True)
class OverlapStats:
    """Token-redundancy statistics over a sliced corpus.

    mean_total_tokens averages the summed per-item token counts (capped,
    duplicates included); mean_union_size averages the distinct-token
    union cardinality.  Their ratio >= 1 measures redundancy.
    """

    mean_total_tokens: float
    mean_union_size: float
    ratio: float
    skipped_queries: int

    def csv_row(self, cap: int) -> str:
        return (f"{cap},{self.mean_total_tokens:.6f},"
                f"{self.mean_union_size:.6f},{self.ratio:.6f},"
                f"{self.skipped_queries}")


def attention_mask_for_item(query: TokenSequence, union_ids: Sequence[int],
                            item: TokenSequence) -> np.ndarray:
    """Binary selection mask over [query | [SEP] | union] for one item.

    Query positions and the [SEP] slot are always selected; a union
    position is selected iff its token occurs in the item.
    """
    members = set(item.ids)
    mask = np.zeros(len(query) + 1 + len(union_ids))
    mask[: len(query) + 1] = 1.0
    for pos, token in enumerate(union_ids):
        if token in members:
            mask[len(query) + 1 + pos] = 1.0
    return mask


def build_union(items: Sequence[TokenSequence], query: TokenSequence,
                union_budget: int) -> UnionEncoding:
    """Union, masks, and positions for one query's candidate list.

    The union is the deduplicated set of all item tokens, sorted ascending
    by id and truncated to the ``union_budget`` smallest ids.  Items that
    lose tokens to truncation are tallied; an item losing everything still
    gets a mask (query + [SEP] only) and will still receive a score.
    """
    if not items:
        raise ValueError("need at least one item")
    if union_budget < 1:
        raise ValueError(f"union budget must be positive, got {union_budget}")
    merged: set[int] = set()
    for item in items:
        merged.update(item.ids)
    union_ids = tuple(sorted(merged)[:union_budget])
    kept = set(union_ids)

    masks = np.stack([attention_mask_for_item(query, union_ids, item)
                      for item in items])
    positions = []
    dropped = []
    for item in items:
        first_pos: dict[int, int] = {}
        lost = 0
        for pos, token in enumerate(item.ids):
            if token in kept:
                first_pos.setdefault(token, pos)
            else:
                lost += 1
        positions.append(first_pos)
        dropped.append(lost)
    return UnionEncoding(union_ids, masks, tuple(positions), tuple(dropped),
                         len(query))


def overlap_stats(dataset: Iterable[tuple[TokenSequence,
                                          Sequence[TokenSequence]]],
                  per_item_cap: int) -> OverlapStats:
    """Corpus-level redundancy: mean total item tokens vs mean union size.

    Each item is truncated to its first ``per_item_cap`` tokens before
    counting.  Queries with zero items are skipped and tallied.
    """
    totals = []
    union_sizes = []
    skipped = 0
    for _, items in dataset:
        if not items:
            skipped += 1
            continue
        capped = [item.ids[:per_item_cap] for item in items]
        totals.append(sum(len(ids) for ids in capped))
        union_sizes.append(len(set().union(*[set(ids) for ids in capped])))
    if not totals:
        raise ValueError("dataset has no queries with items")
    m = float(np.mean(totals))
    n_u = float(np.mean(union_sizes))
    return OverlapStats(m, n_u, m / n_u, skipped)


def compression_factor(item_length: int, n_items: int,
                       union_length: int) -> float:
    """How many item tokens each union token stands in for."""
    if union_length < 1:
        raise ValueError(f"union length must be positive, got {union_length}")
    return item_length * n_items / union_length
