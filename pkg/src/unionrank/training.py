"""Training loop and evaluation wiring.

A batch is a set of whole queries: each instance runs the full joint
forward (union -> encode -> pool -> classify), gets its configured loss,
and contributes gradients; the optimizer applies the batch mean.
Instances whose targets are degenerate for the chosen loss are skipped
and tallied, never NaN'd.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import NonFiniteValue
from .data import RankingInstance
from .encoder import EncoderConfig, ModelParams
from .losses import LOSSES, DegenerateTargets
from .metrics import (
    MetricsReport,
    accuracy_at_threshold,
    auc_roc,
    map_at_k,
    mrr_at_k,
    precision_recall_at_k,
    retention_threshold,
)
from .ranker import ScoreVector, joint_scores, pointwise_score, rank

__all__ = [
    "TrainConfig",
    "TrainResult",
    "AdamW",
    "train",
    "evaluate",
    "TrainingDiverged",
]


class TrainingDiverged(RuntimeError):
    """A training step produced a non-finite value."""


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run depends on."""

    loss: str = "rpl"
    learning_rate: float = 1e-4
    schedule: str = "linear"
    steps: int = 2000
    batch_size: int = 8
    n_items: int = 10
    union_budget: int = 64
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    seed: int = 0
    reinjection: bool = False
    sort_item_tokens: bool = False
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(
                f"loss must be one of {sorted(LOSSES)}, got {self.loss!r}")
        if self.schedule not in ("linear", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        for name in ("learning_rate", "steps", "batch_size", "n_items",
                     "union_budget"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    def to_json_dict(self) -> dict:
        out = asdict(self)
        out["encoder"] = asdict(self.encoder)
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "encoder" in data:
            data["encoder"] = EncoderConfig(**data["encoder"])
        return cls(**data)


@dataclass
class TrainResult:
    params: ModelParams
    step_losses: list[float]
    skipped_instances: int
    config: TrainConfig


class AdamW:
    """Adam with decoupled weight decay and an optional linear decay."""

    def __init__(self, params: ModelParams, learning_rate: float,
                 weight_decay: float = 0.01, total_steps: int | None = None,
                 schedule: str = "linear", beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.total_steps = total_steps
        self.schedule = schedule
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.arrays.items()}

    def current_lr(self) -> float:
        if self.schedule == "linear" and self.total_steps:
            remaining = 1.0 - self.step_count / self.total_steps
            return self.learning_rate * max(remaining, 0.0)
        return self.learning_rate

    def step(self, grads: dict[str, np.ndarray]) -> None:
        lr = self.current_lr()
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, value in self.params.arrays.items():
            g = grads[name]
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            value -= lr * (update + self.weight_decay * value)


def _batches(n_instances: int, batch_size: int, steps: int, rng):
    """Seeded epoch shuffles, then fixed-size batches cycling the data."""
    order = rng.permutation(n_instances)
    cursor = 0
    for _ in range(steps):
        batch = []
        while len(batch) < min(batch_size, n_instances):
            if cursor == len(order):
                order = rng.permutation(n_instances)
                cursor = 0
            batch.append(int(order[cursor]))
            cursor += 1
        yield batch


def train(config: TrainConfig, dataset: list[RankingInstance],
          log_every: int = 0) -> TrainResult:
    """Run the configured number of steps and return the trained params.

    Zero-step configs return the untouched initialization.  A non-finite
    loss aborts with the offending step and query named.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    params = ModelParams.init(config.encoder, config.seed)
    optimizer = AdamW(params, config.learning_rate, config.weight_decay,
                      total_steps=config.steps, schedule=config.schedule)
    loss_fn = LOSSES[config.loss]
    rng = np.random.default_rng(config.seed)
    step_losses: list[float] = []
    skipped = 0
    for step, batch in enumerate(_batches(len(dataset), config.batch_size,
                                          config.steps, rng)):
        grad_sum: dict[str, np.ndarray] = {
            name: np.zeros_like(arr) for name, arr in params.arrays.items()}
        batch_loss = 0.0
        used = 0
        for idx in batch:
            inst = dataset[idx]
            try:
                _, _, logits, graph = joint_scores(
                    params, inst.query, list(inst.items),
                    config.union_budget, reinjection=config.reinjection)
                loss_node = loss_fn(inst.targets, logits)
            except DegenerateTargets:
                skipped += 1
                continue
            except NonFiniteValue as exc:
                raise TrainingDiverged(
                    f"non-finite value at step {step} on query "
                    f"{inst.query_id!r}") from exc
            value = float(loss_node.value)
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at step {step} on query "
                    f"{inst.query_id!r}")
            for name, grad in graph.backward(loss_node).items():
                grad_sum[name] += grad
            batch_loss += value
            used += 1
        if used == 0:
            step_losses.append(math.nan)
            continue
        optimizer.step({name: g / used for name, g in grad_sum.items()})
        step_losses.append(batch_loss / used)
        if log_every and step % log_every == 0:
            print(f"step {step}: loss {step_losses[-1]:.6f}")
    return TrainResult(params, step_losses, skipped, config)


def evaluate(params: ModelParams, dataset: list[RankingInstance],
             ks: tuple[int, ...] = (5, 10), union_budget: int = 64,
             reinjection: bool = False, relevance_threshold: float = 0.5,
             retention: float = 0.8, pointwise: bool = False,
             sort_item_tokens: bool = False,
             score_fn=None) -> tuple[MetricsReport, list[dict]]:
    """Score every instance, rank, and compute the metric suite.

    ``score_fn(instance) -> array`` overrides the model (test hook for
    oracle scorers).  ``pointwise`` scores items one at a time with the
    same checkpoint instead of jointly.  Returns the report plus one JSON
    record per query (ids, logits, scores, ranking, truncation).
    """
    if not dataset:
        raise ValueError("evaluation dataset is empty")
    ranked_flags = []
    pooled_scores: list[float] = []
    pooled_labels: list[int] = []
    records = []
    skipped = 0
    for inst in dataset:
        truncated = 0
        if score_fn is not None:
            logits = np.asarray(score_fn(inst), dtype=np.float64)
            sv = ScoreVector.from_logits(logits)
        elif pointwise:
            logits = np.array([
                pointwise_score(params, inst.query, item,
                                sort_item_tokens=sort_item_tokens)
                for item in inst.items])
            sv = ScoreVector.from_logits(logits)
        else:
            sv, union, _, _ = joint_scores(params, inst.query,
                                           list(inst.items), union_budget,
                                           reinjection=reinjection)
            truncated = sum(union.truncation_report)
        order = rank(sv.scores)
        flags = (inst.targets >= relevance_threshold).astype(int)
        if flags.sum() == 0:
            skipped += 1
        ranked_flags.append(flags[order])
        pooled_scores.extend(sv.logits)
        pooled_labels.extend(flags)
        records.append({
            "query_id": inst.query_id,
            "item_ids": list(range(inst.n_items)),
            "logits": [float(v) for v in sv.logits],
            "scores": [float(v) for v in sv.scores],
            "ranking": [int(i) for i in order],
            "tokens_truncated": int(truncated),
        })
    labels = np.array(pooled_labels)
    scores = np.array(pooled_scores)
    have_both = 0 < labels.sum() < labels.size
    threshold = (retention_threshold(scores, labels, retention)
                 if labels.sum() > 0 else None)
    neg_acc, overall = (accuracy_at_threshold(scores, labels, threshold)
                        if threshold is not None else (None, None))
    report = MetricsReport(
        map_at_k={k: map_at_k(ranked_flags, k) for k in ks},
        mrr_at_k={k: mrr_at_k(ranked_flags, k) for k in ks},
        precision_at_k={k: precision_recall_at_k(ranked_flags, k)[0]
                        for k in ks},
        recall_at_k={k: precision_recall_at_k(ranked_flags, k)[1]
                     for k in ks},
        auc=auc_roc(scores, labels) if have_both else None,
        negative_accuracy=neg_acc,
        overall_accuracy=overall,
        threshold=threshold,
        query_count=len(dataset),
        skipped_queries=skipped,
    )
    return report, records
