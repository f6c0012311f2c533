"""Analytic and measured cost of joint vs pointwise scoring.

The analytic model prices attention quadratically in sequence length and
linearly in depth: scoring N items jointly over a union compressed by a
factor C costs (L_q + L_k * N / C)^2 * L, versus (L_q + L_k)^2 * L * N
for N independent passes.

The measured side counts matmul multiply-adds actually executed by the
encoder graph (projections, attention scores, attention values, and the
feed-forward), so it carries the terms the analytic model drops: the
[CLS]/[SEP] slots and the d^2 projection work.  Those constants shrink
relative to the attention term as sequences grow.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict

from .autodiff import ComputeGraph
from .data import RankingInstance
from .encoder import EncoderConfig, ModelParams
from .ranker import joint_scores, pointwise_score

__all__ = [
    "CostReport",
    "cost_model",
    "encoder_matmul_flops",
    "bench",
]


@dataclass(frozen=True)
class CostReport:
    """Analytic and (optionally) measured costs for the two paths."""

    analytic_joint: float
    analytic_pointwise: float
    analytic_ratio: float
    measured_joint_flops: int | None = None
    measured_pointwise_flops: int | None = None
    measured_ratio: float | None = None
    joint_seconds: float | None = None
    pointwise_seconds: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def csv_header(self) -> str:
        return ",".join(asdict(self).keys())

    def csv_row(self) -> str:
        return ",".join("" if v is None else f"{v:.6f}"
                        for v in asdict(self).values())


def cost_model(query_len: float, item_len: float, n_items: int,
               compression: float, layers: int) -> CostReport:
    """Analytic attention cost of joint vs pointwise scoring."""
    if min(query_len, item_len, n_items, layers) <= 0:
        raise ValueError("all cost inputs must be positive")
    if compression < 1.0:
        raise ValueError(f"compression must be >= 1, got {compression}")
    joint = (query_len + item_len * n_items / compression) ** 2 * layers
    pointwise = (query_len + item_len) ** 2 * layers * n_items
    return CostReport(joint, pointwise, pointwise / joint)


def encoder_matmul_flops(config: EncoderConfig, seq_len: int) -> int:
    """Multiply-adds of one encoder forward, per the graph's own count.

    Per layer: QKV and output projections (4 n d^2), attention scores and
    values (2 n^2 d), and the feed-forward pair (2 n d ff).
    """
    n, d, ff = seq_len, config.dim, config.ff_dim
    per_layer = 4 * n * d * d + 2 * n * n * d + 2 * n * d * ff
    return config.layers * per_layer


def bench(params: ModelParams, dataset: list[RankingInstance],
          union_budget: int) -> CostReport:
    """Measure both scoring paths on real instances.

    Counts the matmul multiply-adds each path executes and wall-clock
    time, and sets the analytic side from each instance's realized union
    (compression is item tokens divided by union size, so the analytic
    joint cost uses the actual union length).
    """
    if not dataset:
        raise ValueError("bench needs a non-empty dataset")
    layers = params.config.layers
    measured_joint = 0
    measured_pointwise = 0
    analytic_joint = 0.0
    analytic_pointwise = 0.0
    joint_seconds = 0.0
    pointwise_seconds = 0.0
    for inst in dataset:
        t0 = time.perf_counter()
        _, union, _, graph = joint_scores(params, inst.query,
                                          list(inst.items), union_budget)
        joint_seconds += time.perf_counter() - t0
        measured_joint += graph.matmul_flops
        query_len = len(inst.query)
        analytic_joint += (query_len + union.size) ** 2 * layers
        t0 = time.perf_counter()
        for item in inst.items:
            graph = ComputeGraph()
            pointwise_score(params, inst.query, item, graph=graph)
            measured_pointwise += graph.matmul_flops
        pointwise_seconds += time.perf_counter() - t0
        analytic_pointwise += sum(
            (query_len + len(item)) ** 2 * layers for item in inst.items)
    return CostReport(
        analytic_joint=analytic_joint,
        analytic_pointwise=analytic_pointwise,
        analytic_ratio=analytic_pointwise / analytic_joint,
        measured_joint_flops=measured_joint,
        measured_pointwise_flops=measured_pointwise,
        measured_ratio=measured_pointwise / measured_joint,
        joint_seconds=joint_seconds,
        pointwise_seconds=pointwise_seconds,
    )
