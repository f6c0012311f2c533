"""Per-item scores out of one shared encoder pass.

Each item's representation is the mean of the context rows its mask
selects (query span, [SEP], and exactly its own union tokens).  A single
shared classifier vector turns the N pooled rows into N logits in one
matrix product; softmax across the list gives the scores, and ranking is
a stable descending sort.

A pointwise scorer (one encoder pass per item, original token order kept)
uses the same pooling and classifier so the two paths are directly
comparable, including exact agreement in the single-item case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ComputeGraph, Tensor
from .encoder import (
    AssembledInput,
    ContextEmbeddings,
    EncoderConfig,
    ModelParams,
    assemble_input,
    encode,
    pooling_offsets,
)
from .tokenizer import TokenSequence
from .union import UnionEncoding, build_union

__all__ = [
    "PooledReps",
    "ScoreVector",
    "selective_pool",
    "score",
    "rank",
    "joint_scores",
    "pointwise_score",
]


@dataclass(frozen=True)
class PooledReps:
    """One pooled d-vector per item plus how many rows went into each."""

    rows: Tensor                # (N, d) graph node
    pooled_counts: np.ndarray   # (N,) ints


@dataclass(frozen=True)
class ScoreVector:
    """Logits and their softmax for one query's item list."""

    logits: np.ndarray
    scores: np.ndarray

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "ScoreVector":
        # fsum keeps the normalizer independent of item order, so scores
        # permute bit-exactly when the item list does.
        shifted = np.exp(logits - logits.max())
        return cls(np.asarray(logits, dtype=np.float64),
                   shifted / math.fsum(shifted))


def _full_masks(union: UnionEncoding, layout: AssembledInput) -> np.ndarray:
    """Lift item masks onto the assembled input: [CLS] and padding are 0."""
    n_items = union.n_items
    masks = np.zeros((n_items, layout.length))
    start, end = 1, 1 + union.item_masks.shape[1]
    masks[:, start:end] = union.item_masks
    return masks


def selective_pool(graph: ComputeGraph, context: ContextEmbeddings,
                   union: UnionEncoding, reinjection: bool = False
                   ) -> PooledReps:
    """Mean the context rows each item selects; [CLS] never participates.

    With re-injection on, each item's mean is shifted by the average
    sinusoid of its selected tokens' original within-item positions
    (equivalent to adding the sinusoid to each selected row first).
    """
    masks = _full_masks(union, context.layout)
    pooled = graph.apply("masked_mean", context.rows, graph.constant(masks))
    if reinjection:
        offsets = pooling_offsets(union, context.rows.shape[1])
        pooled = graph.apply("add", pooled, graph.constant(offsets))
    return PooledReps(pooled, masks.sum(axis=1).astype(int))


def score(graph: ComputeGraph, pooled: PooledReps, classifier: Tensor
          ) -> tuple[Tensor, Tensor]:
    """Shared inner product per pooled row, then softmax across the list.

    The inner product is written as multiply + reduce along the feature
    axis so each logit is computed independently of its neighbours (a
    batched matmul would let BLAS row blocking perturb the last bit under
    item permutations).  Returns (logits, scores) graph nodes of shape (N,).
    """
    logits = graph.apply("sum",
                         graph.apply("mul", pooled.rows, classifier),
                         axis=1)
    return logits, graph.apply("softmax", logits)


def rank(scores: np.ndarray) -> np.ndarray:
    """Item indices by descending score; ties keep ascending input order."""
    scores = np.asarray(scores)
    if scores.size < 1:
        raise ValueError("cannot rank an empty score vector")
    return np.argsort(-scores, kind="stable")


def joint_scores(params: ModelParams, query: TokenSequence,
                 items: list[TokenSequence], union_budget: int,
                 reinjection: bool = False, max_len: int | None = None,
                 graph: ComputeGraph | None = None
                 ) -> tuple[ScoreVector, UnionEncoding, Tensor, ComputeGraph]:
    """Full joint pass: union -> encode once -> pool -> classify.

    Returns the numeric scores, the union encoding (with its truncation
    report), the logits node, and the graph, so callers can attach a loss
    and differentiate.
    """
    graph = graph or ComputeGraph()
    pnodes = params.register(graph)
    union = build_union(items, query, union_budget)
    inp = assemble_input(query, union.union_ids, max_len)
    context = encode(graph, pnodes, params.config, inp)
    pooled = selective_pool(graph, context, union, reinjection)
    logits, _ = score(graph, pooled, pnodes["classifier"])
    return (ScoreVector.from_logits(logits.value.copy()),
            union, logits, graph)


def pointwise_score(params: ModelParams, query: TokenSequence,
                    item: TokenSequence, max_len: int | None = None,
                    sort_item_tokens: bool = False,
                    graph: ComputeGraph | None = None) -> float:
    """Score one (query, item) pair in isolation.

    The item keeps its original token order and duplicates (unless the
    sorted-tokens ablation is requested, which sorts ids ascending).
    Pooling covers the query span, [SEP], and the item span, mirroring the
    joint path so that a single-item joint call is directly comparable.
    """
    ids = tuple(sorted(item.ids)) if sort_item_tokens else tuple(item.ids)
    graph = graph or ComputeGraph()
    pnodes = params.register(graph)
    inp = assemble_input(query, ids, max_len)
    context = encode(graph, pnodes, params.config, inp)
    mask = np.zeros(inp.length)
    mask[inp.query_span[0]: inp.union_span[1]] = 1.0
    pooled = graph.apply("masked_mean", context.rows,
                         graph.constant(mask[None, :]))
    logit = graph.apply("sum",
                        graph.apply("mul", pooled, pnodes["classifier"]),
                        axis=1)
    return float(logit.value[0])
