"""Training objectives over one query's targets y and logits f.

Four losses are provided: per-pair binary cross-entropy ("bce"), softmax
cross-entropy against softmaxed targets ("listnet"), multi-class
cross-entropy against sum-normalized targets ("ce"), and the
ranking-probability loss ("rpl").

"rpl" replaces each item's target and logit with the mass accumulated
over its lower set (the items whose target is strictly smaller), then
takes the cross-entropy between the normalized cumulative targets and the
softmax of the cumulative logits across the list.  It therefore equals
the listnet-style cross-entropy evaluated on those modified quantities.

Every loss accepts logits either as a plain array (returns a float) or as
a graph node (returns a scalar node for differentiation).  Losses are per
query; averaging over a batch is the trainer's concern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ComputeGraph, Tensor

__all__ = [
    "DegenerateTargets",
    "lower_sets",
    "lower_set_matrix",
    "bce_loss",
    "listnet_loss",
    "ce_loss",
    "rpl_loss",
    "ranking_prob_matrix",
    "RankProbMatrix",
    "LOSSES",
]


class DegenerateTargets(ValueError):
    """The target vector carries no usable ordering signal.

    Raised when every target is equal (all lower sets empty), or the
    normalizing mass is zero.  Callers should skip the instance and tally
    it rather than treat this as a failure.
    """


def lower_sets(y) -> list[np.ndarray]:
    """For each item, the indices whose target is strictly smaller.

    Tied items therefore share the same lower set, and larger targets
    never have smaller sets.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.size < 1:
        raise ValueError("need at least one target")
    if not np.isfinite(y).all():
        raise ValueError("targets must be finite")
    return [np.flatnonzero(y < y[j]) for j in range(y.size)]


def lower_set_matrix(y) -> np.ndarray:
    """Binary matrix A with A[j, k] = 1 iff y[k] < y[j]."""
    y = np.asarray(y, dtype=np.float64)
    return (y[None, :] < y[:, None]).astype(np.float64)


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def _node_and_graph(logits, n: int) -> tuple[ComputeGraph, Tensor, bool]:
    if isinstance(logits, Tensor):
        if logits.value.shape != (n,):
            raise ValueError(
                f"logits shape {logits.shape} does not match {n} targets")
        return logits.graph, logits, True
    arr = np.asarray(logits, dtype=np.float64)
    if arr.shape != (n,):
        raise ValueError(f"logits shape {arr.shape} does not match {n} targets")
    graph = ComputeGraph()
    return graph, graph.constant(arr), False


def _finish(node: Tensor, as_node: bool):
    return node if as_node else float(node.value)


def bce_loss(y, logits):
    """Summed per-pair binary cross-entropy through the logistic map.

    Targets must lie in [0, 1].  Log arguments are clamped at 1e-12, so
    the result is finite and non-negative for any finite logits.
    """
    y = np.asarray(y, dtype=np.float64)
    if ((y < 0) | (y > 1)).any():
        raise ValueError("bce targets must lie in [0, 1]")
    graph, f, as_node = _node_and_graph(logits, y.size)
    p = graph.apply("sigmoid", f)
    one_minus = graph.apply("add", graph.apply("scale", p, factor=-1.0),
                            graph.constant(1.0))
    pos = graph.apply("mul", graph.constant(y), graph.apply("log", p))
    neg = graph.apply("mul", graph.constant(1.0 - y),
                      graph.apply("log", one_minus))
    total = graph.apply("sum", graph.apply("add", pos, neg))
    return _finish(graph.apply("scale", total, factor=-1.0), as_node)


def listnet_loss(y, logits):
    """Cross-entropy between softmax(targets) and softmax(logits)."""
    y = np.asarray(y, dtype=np.float64)
    graph, f, as_node = _node_and_graph(logits, y.size)
    target_dist = _softmax(y)
    logp = graph.apply("log", graph.apply("softmax", f))
    total = graph.apply("sum", graph.apply("mul", graph.constant(target_dist),
                                           logp))
    return _finish(graph.apply("scale", total, factor=-1.0), as_node)


def ce_loss(y, logits):
    """Cross-entropy between sum-normalized targets and softmax(logits).

    Raises DegenerateTargets when the targets sum to zero.
    """
    y = np.asarray(y, dtype=np.float64)
    mass = y.sum()
    if mass <= 1e-12:
        raise DegenerateTargets("targets sum to zero")
    graph, f, as_node = _node_and_graph(logits, y.size)
    logp = graph.apply("log", graph.apply("softmax", f))
    total = graph.apply("sum", graph.apply("mul", graph.constant(y / mass),
                                           logp))
    return _finish(graph.apply("scale", total, factor=-1.0), as_node)


def rpl_loss(y, logits):
    """Cross-entropy on cumulative lower-set masses of targets and logits.

    With A the lower-set matrix, the modified targets are A @ y
    (normalized to sum 1) and the modified logits A @ f; the loss is
    -sum(norm(A @ y) * log softmax(A @ f)) across the query's items.

    Raises DegenerateTargets when every target is equal or the modified
    targets have zero mass (e.g. the only strictly-smaller targets are
    exactly zero), since the loss is uninformative there.
    """
    y = np.asarray(y, dtype=np.float64)
    matrix = lower_set_matrix(y)
    modified = matrix @ y
    mass = modified.sum()
    if not matrix.any() or mass <= 1e-12:
        raise DegenerateTargets(
            "lower sets carry no target mass; instance should be skipped")
    graph, f, as_node = _node_and_graph(logits, y.size)
    n = y.size
    cumulative = graph.apply("reshape",
                             graph.apply("matmul", graph.constant(matrix),
                                         graph.apply("reshape", f,
                                                     shape=(n, 1))),
                             shape=(n,))
    logp = graph.apply("log", graph.apply("softmax", cumulative))
    total = graph.apply("sum",
                        graph.apply("mul", graph.constant(modified / mass),
                                    logp))
    return _finish(graph.apply("scale", total, factor=-1.0), as_node)


LOSSES = {
    "bce": bce_loss,
    "listnet": listnet_loss,
    "ce": ce_loss,
    "rpl": rpl_loss,
}


@dataclass(frozen=True)
class RankProbMatrix:
    """Location-assignment probabilities derived from cumulative masses.

    Entry [j, k] is proportional to the logit mass strictly below rank
    location k (per the reference ordering); the matrix is globally
    normalized to sum to one, and its diagonal is the per-item ranking
    probability vector.
    """

    matrix: np.ndarray

    @property
    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.matrix).copy()

    def normalized_diagonal(self) -> np.ndarray:
        d = self.diagonal
        mass = d.sum()
        return d / mass if mass > 0 else d


def ranking_prob_matrix(f, reference) -> RankProbMatrix:
    """Build the location-probability matrix for logits f.

    Logits already inside [0, 1] are used as-is; otherwise they are
    shifted and scaled into [0, 1] (an all-equal out-of-range vector maps
    to 0.5).  Lower sets come from the supplied reference targets, so the
    same locations can be scored for different logit vectors.  A single
    item (or an all-equal reference) yields the zero matrix.
    """
    f = np.asarray(f, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if f.shape != reference.shape:
        raise ValueError("logits and reference must have matching shapes")
    lo, hi = f.min(), f.max()
    if lo >= 0.0 and hi <= 1.0:
        unit = f
    elif hi > lo:
        unit = (f - lo) / (hi - lo)
    else:
        unit = np.full_like(f, 0.5)
    cumulative = lower_set_matrix(reference) @ unit
    raw = np.tile(cumulative, (f.size, 1))
    total = raw.sum()
    return RankProbMatrix(raw / total if total > 0 else raw)
