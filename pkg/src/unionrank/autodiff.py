"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is an eagerly evaluated tape: every ``apply`` computes its value
immediately and records the node, so the same graph can be replayed after
leaf values change (``recompute``), differentiated (``backward``), and
checked against central finite differences (``grad_check``).

Everything is float64.  Values are validated to stay finite, which turns
overflow bugs into immediate errors instead of silently corrupted training
runs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ComputeGraph",
    "ShapeMismatch",
    "NonFiniteValue",
    "OP_KINDS",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)
_LN_EPS = 1e-12


class ShapeMismatch(ValueError):
    """Raised when operand shapes do not conform for the requested op."""


class NonFiniteValue(ArithmeticError):
    """Raised when a NaN or infinity enters or leaves a primitive."""


class Tensor:
    """One node of the tape: a value plus the recipe that produced it.

    Leaf nodes (parameters and constants) have ``op is None``.  Interior
    nodes keep references to their inputs, so the tape can be replayed in
    recorded order.  ``value`` is always a float64 ndarray.
    """

    __slots__ = ("graph", "index", "op", "inputs", "attrs", "value", "grad",
                 "name", "trainable", "_replay")

    def __init__(self, graph: "ComputeGraph", index: int, value: np.ndarray,
                 op: str | None = None, inputs: tuple["Tensor", ...] = (),
                 attrs: dict | None = None, name: str | None = None,
                 trainable: bool = False):
        self.graph = graph
        self.index = index
        self.op = op
        self.inputs = inputs
        self.attrs = attrs or {}
        self.value = value
        self.grad: np.ndarray | None = None
        self.name = name
        self.trainable = trainable
        # bound re-evaluation thunk, compiled once; replays are the hot
        # path of finite-difference sweeps
        if op is None:
            self._replay = None
        else:
            fwd = _FORWARD[op]
            node_attrs = self.attrs

            def replay(node=self, fwd=fwd, ins=inputs, attrs=node_attrs):
                node.value = fwd([t.value for t in ins], attrs)

            self._replay = replay

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the values."""
        return self.value.reshape(-1)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = self.name or self.op or "const"
        return f"Tensor({tag}, shape={self.shape})"


def _as_f64(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _softmax_last(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _layer_norm_parts(x: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * istd
    return xhat, istd


# ---------------------------------------------------------------------------
# Forward kernels.  Each takes the input value arrays plus the node attrs.
# ---------------------------------------------------------------------------

def _fwd_matmul(vals, attrs):
    return np.matmul(vals[0], vals[1])


def _fwd_add(vals, attrs):
    return vals[0] + vals[1]


def _fwd_mul(vals, attrs):
    return vals[0] * vals[1]


def _fwd_scale(vals, attrs):
    return vals[0] * attrs["factor"]


def _fwd_gelu(vals, attrs):
    x = vals[0]
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def _fwd_sigmoid(vals, attrs):
    x = vals[0]
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _fwd_log(vals, attrs):
    clamp = attrs.get("clamp", _LN_EPS)
    return np.log(np.maximum(vals[0], clamp))


def _fwd_sum(vals, attrs):
    axis = attrs.get("axis")
    return np.asarray(vals[0].sum(axis=axis), dtype=np.float64)


def _fwd_softmax(vals, attrs):
    return _softmax_last(vals[0])


def _fwd_layer_norm(vals, attrs):
    x, gamma, beta = vals
    xhat, _ = _layer_norm_parts(x, attrs.get("eps", 1e-5))
    return xhat * gamma + beta


def _fwd_embedding_gather(vals, attrs):
    return vals[0][attrs["ids"]]


def _fwd_masked_mean(vals, attrs):
    # Each output row is reduced independently so results are bit-stable
    # under any permutation of the mask rows.
    x, mask = vals
    m2 = mask if mask.ndim == 2 else mask[None, :]
    out = np.empty((m2.shape[0], x.shape[1]))
    for j in range(m2.shape[0]):
        out[j] = x[m2[j] > 0].mean(axis=0)
    return out if mask.ndim == 2 else out[0]


def _fwd_transpose(vals, attrs):
    return np.transpose(vals[0], attrs["axes"]).copy()


def _fwd_reshape(vals, attrs):
    return vals[0].reshape(attrs["shape"]).copy()


# ---------------------------------------------------------------------------
# Backward kernels.  Each returns one gradient per input (None = no flow).
# ---------------------------------------------------------------------------

def _bwd_matmul(node, g):
    a, b = (t.value for t in node.inputs)
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return ga, gb


def _bwd_add(node, g):
    a, b = node.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _bwd_mul(node, g):
    a, b = node.inputs
    return (_unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape))


def _bwd_scale(node, g):
    return (g * node.attrs["factor"],)


def _bwd_gelu(node, g):
    x = node.inputs[0].value
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return (g * (cdf + x * pdf),)


def _bwd_sigmoid(node, g):
    s = node.value
    return (g * s * (1.0 - s),)


def _bwd_log(node, g):
    clamp = node.attrs.get("clamp", _LN_EPS)
    x = node.inputs[0].value
    return (np.where(x > clamp, g / np.maximum(x, clamp), 0.0),)


def _bwd_sum(node, g):
    x = node.inputs[0]
    axis = node.attrs.get("axis")
    if axis is None:
        return (np.full(x.shape, float(g)),)
    return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)


def _bwd_softmax(node, g):
    s = node.value
    return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)


def _bwd_layer_norm(node, g):
    x, gamma, _ = (t.value for t in node.inputs)
    xhat, istd = _layer_norm_parts(x, node.attrs.get("eps", 1e-5))
    gh = g * gamma
    gx = istd * (gh - gh.mean(axis=-1, keepdims=True)
                 - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
    batch_axes = tuple(range(g.ndim - 1))
    ggamma = (g * xhat).sum(axis=batch_axes)
    gbeta = g.sum(axis=batch_axes)
    return gx, ggamma, gbeta


def _bwd_embedding_gather(node, g):
    table = node.inputs[0].value
    gt = np.zeros_like(table)
    np.add.at(gt, node.attrs["ids"], g)
    return (gt,)


def _bwd_masked_mean(node, g):
    x, mask = (t.value for t in node.inputs)
    m2 = mask if mask.ndim == 2 else mask[None, :]
    g2 = g if mask.ndim == 2 else g[None, :]
    counts = m2.sum(axis=1)
    gx = (m2 / counts[:, None]).T @ g2
    return gx, None


def _bwd_transpose(node, g):
    return (np.transpose(g, np.argsort(node.attrs["axes"])).copy(),)


def _bwd_reshape(node, g):
    return (g.reshape(node.inputs[0].shape).copy(),)


_FORWARD = {
    "matmul": _fwd_matmul,
    "add": _fwd_add,
    "mul": _fwd_mul,
    "scale": _fwd_scale,
    "gelu": _fwd_gelu,
    "sigmoid": _fwd_sigmoid,
    "log": _fwd_log,
    "sum": _fwd_sum,
    "softmax": _fwd_softmax,
    "layer_norm": _fwd_layer_norm,
    "embedding_gather": _fwd_embedding_gather,
    "masked_mean": _fwd_masked_mean,
    "transpose": _fwd_transpose,
    "reshape": _fwd_reshape,
}

_BACKWARD = {
    "matmul": _bwd_matmul,
    "add": _bwd_add,
    "mul": _bwd_mul,
    "scale": _bwd_scale,
    "gelu": _bwd_gelu,
    "sigmoid": _bwd_sigmoid,
    "log": _bwd_log,
    "sum": _bwd_sum,
    "softmax": _bwd_softmax,
    "layer_norm": _bwd_layer_norm,
    "embedding_gather": _bwd_embedding_gather,
    "masked_mean": _bwd_masked_mean,
    "transpose": _bwd_transpose,
    "reshape": _bwd_reshape,
}

OP_KINDS = frozenset(_FORWARD)


def _check_shapes(op: str, vals: Sequence[np.ndarray], attrs: dict) -> None:
    if op == "matmul":
        a, b = vals
        if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
            raise ShapeMismatch(
                f"matmul needs two stacks of matrices of equal rank, got "
                f"{a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
            raise ShapeMismatch(
                f"matmul shapes do not conform: {a.shape} @ {b.shape}")
    elif op in ("add", "mul"):
        a, b = vals
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeMismatch(
                f"{op} shapes do not broadcast: {a.shape} vs {b.shape}"
            ) from None
    elif op == "layer_norm":
        x, gamma, beta = vals
        d = x.shape[-1]
        if gamma.shape != (d,) or beta.shape != (d,):
            raise ShapeMismatch(
                f"layer_norm gain/shift must be ({d},); got "
                f"{gamma.shape} and {beta.shape} for input {x.shape}")
    elif op == "embedding_gather":
        ids = np.asarray(attrs["ids"])
        table = vals[0]
        if table.ndim != 2:
            raise ShapeMismatch(
                f"embedding_gather table must be 2-D, got {table.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise ShapeMismatch(
                f"gather ids out of range for table of {table.shape[0]} rows")
    elif op == "masked_mean":
        x, mask = vals
        if x.ndim != 2 or mask.ndim not in (1, 2) or mask.shape[-1] != x.shape[0]:
            raise ShapeMismatch(
                f"masked_mean needs x (n, d) and mask (..., n); got "
                f"{x.shape} and {mask.shape}")
        if not np.isin(mask, (0.0, 1.0)).all():
            raise ShapeMismatch("masked_mean mask must be binary")
        m2 = mask if mask.ndim == 2 else mask[None, :]
        if (m2.sum(axis=1) == 0).any():
            raise ShapeMismatch("masked_mean mask selects zero rows")
    elif op == "transpose":
        axes = attrs.get("axes")
        if axes is None:
            attrs["axes"] = tuple(range(vals[0].ndim))[::-1]
        elif sorted(axes) != list(range(vals[0].ndim)):
            raise ShapeMismatch(
                f"transpose axes {axes} invalid for shape {vals[0].shape}")
    elif op == "reshape":
        shape = tuple(attrs["shape"])
        if int(np.prod(shape)) != vals[0].size:
            raise ShapeMismatch(
                f"cannot reshape {vals[0].shape} into {shape}")


class ComputeGraph:
    """Replayable tape of primitive applications with named parameters."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.parameters: dict[str, Tensor] = {}
        self.matmul_flops: int = 0

    # -- node construction ---------------------------------------------

    def _record(self, value, op=None, inputs=(), attrs=None, name=None,
                trainable=False) -> Tensor:
        node = Tensor(self, len(self.nodes), value, op, inputs, attrs,
                      name, trainable)
        self.nodes.append(node)
        return node

    def parameter(self, name: str, value) -> Tensor:
        """Register a trainable leaf.  The array is referenced, not copied."""
        if name in self.parameters:
            raise ValueError(f"duplicate parameter name: {name!r}")
        node = self._record(_as_f64(value), name=name, trainable=True)
        self.parameters[name] = node
        return node

    def constant(self, value) -> Tensor:
        """Register a non-trainable leaf."""
        return self._record(_as_f64(value))

    def apply(self, op: str, *inputs: Tensor, **attrs) -> Tensor:
        """Apply one primitive, validate it, and record the result.

        Raises ShapeMismatch when operand shapes do not conform and
        NonFiniteValue when a NaN/Inf enters or leaves the op.
        """
        if op not in _FORWARD:
            raise ValueError(f"unknown primitive: {op!r}")
        vals = [t.value for t in inputs]
        for t, v in zip(inputs, vals):
            if not np.isfinite(v).all():
                raise NonFiniteValue(f"non-finite input to {op}: {t!r}")
        _check_shapes(op, vals, attrs)
        out = _FORWARD[op](vals, attrs)
        if not np.isfinite(out).all():
            raise NonFiniteValue(f"{op} produced a non-finite value")
        if op == "matmul":
            a, b = vals
            batch = int(np.prod(a.shape[:-2], dtype=np.int64))
            self.matmul_flops += batch * a.shape[-2] * a.shape[-1] * b.shape[-1]
        return self._record(np.asarray(out, dtype=np.float64), op,
                            tuple(inputs), attrs)

    # -- replay and differentiation -------------------------------------

    def recompute(self, nodes: Sequence[Tensor] | None = None) -> None:
        """Re-evaluate interior nodes in recorded order from leaf values."""
        for node in (nodes if nodes is not None else self.nodes):
            replay = node._replay
            if replay is not None:
                replay()

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss for every named parameter.

        Parameters the loss does not depend on receive zero gradients.
        Each node is visited exactly once, in reverse recorded order.
        """
        if loss.graph is not self:
            raise ValueError("loss node belongs to a different graph")
        if loss.value.size != 1:
            raise ValueError(
                f"backward needs a scalar loss, got shape {loss.shape}")
        for p in self.parameters.values():
            p.grad = None
        grads: dict[int, np.ndarray] = {
            loss.index: np.ones_like(loss.value)}
        for node in reversed(self.nodes[:loss.index + 1]):
            g = grads.pop(node.index, None)
            if g is None or node.op is None:
                if node.op is None and g is not None:
                    node.grad = g
                continue
            for inp, gi in zip(node.inputs, _BACKWARD[node.op](node, g)):
                if gi is None:
                    continue
                if inp.index in grads:
                    grads[inp.index] = grads[inp.index] + gi
                else:
                    grads[inp.index] = gi
        out = {}
        for name, p in self.parameters.items():
            if p.grad is None or p.index > loss.index:
                p.grad = np.zeros_like(p.value)
            out[name] = p.grad
        return out

    def _downstream(self, leaf: Tensor) -> list[Tensor]:
        """Interior nodes whose value depends on ``leaf``, in tape order."""
        hit = {leaf.index}
        order = []
        for node in self.nodes[leaf.index + 1:]:
            if node.op is not None and any(t.index in hit for t in node.inputs):
                hit.add(node.index)
                order.append(node)
        return order

    def grad_check(self, loss: Tensor, epsilon: float = 1e-5) -> float:
        """Worst relative disagreement between backward() and central
        finite differences, swept over every parameter scalar.

        The error for one scalar is |analytic - numeric| divided by
        max(|analytic|, |numeric|, 1e-8).  Any non-finite loss during the
        sweep is rejected.
        """
        if not (0.0 < epsilon <= 1e-2):
            raise ValueError(f"epsilon must be in (0, 1e-2], got {epsilon}")
        analytic = self.backward(loss)
        worst = 0.0
        for name, p in self.parameters.items():
            flat = p.value.reshape(-1)
            aflat = analytic[name].reshape(-1)
            order = self._downstream(p)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                self.recompute(order)
                lo_hi = float(loss.value)
                flat[i] = orig - epsilon
                self.recompute(order)
                lo_lo = float(loss.value)
                flat[i] = orig
                if not (np.isfinite(lo_hi) and np.isfinite(lo_lo)):
                    self.recompute(order)
                    raise NonFiniteValue(
                        f"non-finite loss while perturbing {name}[{i}]")
                numeric = (lo_hi - lo_lo) / (2.0 * epsilon)
                err = abs(aflat[i] - numeric) / max(
                    abs(aflat[i]), abs(numeric), 1e-8)
                if err > worst:
                    worst = err
            self.recompute(order)
        return worst

    # grad_check reuses the tape and restores every value it touches, so
    # parameters and node values are unchanged when it returns.
