"""Small pre-norm transformer encoder over the assembled input.

The input layout is [CLS] + query + [SEP] + union + padding.  Attention
runs over the full sequence (every real token attends to every other), so
item-item interactions happen here; padded positions are excluded from
attention by a large negative score bias, and excluded from pooling by the
downstream masks.

Sequence order inside items is discarded by the union.  The optional
re-injection path adds fixed sinusoidal encodings of each token's original
within-item position back onto its context vector just before pooling.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import ComputeGraph, Tensor
from .tokenizer import CLS_ID, PAD_ID, SEP_ID, TokenSequence
from .union import UnionEncoding

__all__ = [
    "EncoderConfig",
    "ModelParams",
    "AssembledInput",
    "ContextEmbeddings",
    "assemble_input",
    "encode",
    "sinusoid_encoding",
    "reinject_positional",
    "save_checkpoint",
    "load_checkpoint",
]

_PAD_SCORE_BIAS = -1e9
_INIT_SCALE = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture knobs for the encoder stack."""

    layers: int = 2
    dim: int = 64
    heads: int = 4
    ff_dim: int = 256
    max_positions: int = 128
    vocab_size: int = 4096

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(
                f"dim {self.dim} not divisible by heads {self.heads}")
        for name in ("dim", "heads", "ff_dim", "max_positions", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.layers < 0:
            raise ValueError("layers must be non-negative")


class ModelParams:
    """Named trainable arrays: embeddings, layer weights, classifier.

    Weight matrices start from seeded N(0, 0.02); biases start at zero and
    layer-norm gains at one, the usual scheme for small transformers.
    The classifier is a bare d-vector (no bias).
    """

    def __init__(self, config: EncoderConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        self.arrays = arrays

    @classmethod
    def init(cls, config: EncoderConfig, seed: int) -> "ModelParams":
        rng = np.random.default_rng(seed)
        d, ff = config.dim, config.ff_dim

        def w(*shape):
            return rng.normal(0.0, _INIT_SCALE, size=shape)

        arrays: dict[str, np.ndarray] = {
            "tok_emb": w(config.vocab_size, d),
            "pos_emb": w(config.max_positions, d),
            "classifier": w(d),
        }
        for i in range(config.layers):
            p = f"layer{i}."
            arrays[p + "ln1.gain"] = np.ones(d)
            arrays[p + "ln1.shift"] = np.zeros(d)
            for proj in ("q", "k", "v", "o"):
                arrays[p + f"attn.w{proj}"] = w(d, d)
                arrays[p + f"attn.b{proj}"] = np.zeros(d)
            arrays[p + "ln2.gain"] = np.ones(d)
            arrays[p + "ln2.shift"] = np.zeros(d)
            arrays[p + "ff.w1"] = w(d, ff)
            arrays[p + "ff.b1"] = np.zeros(ff)
            arrays[p + "ff.w2"] = w(ff, d)
            arrays[p + "ff.b2"] = np.zeros(d)
        return cls(config, arrays)

    def register(self, graph: ComputeGraph) -> dict[str, Tensor]:
        """Expose every array as a trainable leaf of ``graph``."""
        return {name: graph.parameter(name, arr)
                for name, arr in self.arrays.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config,
                           {k: v.copy() for k, v in self.arrays.items()})


@dataclass(frozen=True)
class AssembledInput:
    """Encoder input ids with the span bookkeeping downstream code needs."""

    ids: np.ndarray            # int token ids, length max_len
    validity: np.ndarray       # float64 1 on real tokens, 0 on padding
    query_span: tuple[int, int]
    sep_index: int
    union_span: tuple[int, int]

    @property
    def length(self) -> int:
        return len(self.ids)

    @property
    def real_length(self) -> int:
        return int(self.validity.sum())


def assemble_input(query: TokenSequence, union_ids, max_len: int | None = None
                   ) -> AssembledInput:
    """Lay out [CLS] + query + [SEP] + union (+ padding to max_len)."""
    union_ids = tuple(union_ids)
    need = 2 + len(query) + len(union_ids)
    if max_len is None:
        max_len = need
    if need > max_len:
        raise ValueError(
            f"input needs {need} positions but max_len is {max_len}")
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[0] = CLS_ID
    ids[1:1 + len(query)] = list(query.ids)
    sep = 1 + len(query)
    ids[sep] = SEP_ID
    ids[sep + 1: need] = union_ids
    validity = np.zeros(max_len)
    validity[:need] = 1.0
    return AssembledInput(ids, validity,
                          query_span=(1, sep),
                          sep_index=sep,
                          union_span=(sep + 1, need))


@dataclass(frozen=True)
class ContextEmbeddings:
    """Per-position context vectors plus the span map of their input."""

    rows: Tensor               # (length, dim) graph node
    layout: AssembledInput


def encode(graph: ComputeGraph, params: dict[str, Tensor],
           config: EncoderConfig, inp: AssembledInput) -> ContextEmbeddings:
    """Pre-norm transformer forward; one output row per input position.

    With zero layers the output is exactly token embedding + position
    embedding.  Padded key positions receive a -1e9 score bias, which
    underflows to exactly zero attention weight in float64.
    """
    n = inp.length
    if n > config.max_positions:
        raise ValueError(
            f"input length {n} exceeds max_positions {config.max_positions}")
    d, heads = config.dim, config.heads
    dh = d // heads
    x = graph.apply("add",
                    graph.apply("embedding_gather", params["tok_emb"],
                                ids=inp.ids),
                    graph.apply("embedding_gather", params["pos_emb"],
                                ids=np.arange(n)))
    score_bias = graph.constant((1.0 - inp.validity) * _PAD_SCORE_BIAS)

    def split_heads(t):
        t = graph.apply("reshape", t, shape=(n, heads, dh))
        return graph.apply("transpose", t, axes=(1, 0, 2))

    for i in range(config.layers):
        p = f"layer{i}."
        h = graph.apply("layer_norm", x, params[p + "ln1.gain"],
                        params[p + "ln1.shift"])
        q = split_heads(graph.apply("add",
                                    graph.apply("matmul", h, params[p + "attn.wq"]),
                                    params[p + "attn.bq"]))
        k = split_heads(graph.apply("add",
                                    graph.apply("matmul", h, params[p + "attn.wk"]),
                                    params[p + "attn.bk"]))
        v = split_heads(graph.apply("add",
                                    graph.apply("matmul", h, params[p + "attn.wv"]),
                                    params[p + "attn.bv"]))
        scores = graph.apply("scale",
                             graph.apply("matmul", q,
                                         graph.apply("transpose", k,
                                                     axes=(0, 2, 1))),
                             factor=1.0 / np.sqrt(dh))
        weights = graph.apply("softmax",
                              graph.apply("add", scores, score_bias))
        ctx = graph.apply("matmul", weights, v)
        ctx = graph.apply("reshape",
                          graph.apply("transpose", ctx, axes=(1, 0, 2)),
                          shape=(n, d))
        attn_out = graph.apply("add",
                               graph.apply("matmul", ctx, params[p + "attn.wo"]),
                               params[p + "attn.bo"])
        x = graph.apply("add", x, attn_out)
        h2 = graph.apply("layer_norm", x, params[p + "ln2.gain"],
                         params[p + "ln2.shift"])
        f1 = graph.apply("gelu",
                         graph.apply("add",
                                     graph.apply("matmul", h2, params[p + "ff.w1"]),
                                     params[p + "ff.b1"]))
        f2 = graph.apply("add",
                         graph.apply("matmul", f1, params[p + "ff.w2"]),
                         params[p + "ff.b2"])
        x = graph.apply("add", x, f2)
    return ContextEmbeddings(rows=x, layout=inp)


def sinusoid_encoding(positions: np.ndarray, dim: int) -> np.ndarray:
    """Fixed sin/cos position encoding, one row per requested position.

    Even columns carry sin(pos / 10000^(2i/d)), odd columns the matching
    cos; position 0 therefore encodes as (0, 1, 0, 1, ...).
    """
    positions = np.asarray(positions, dtype=np.float64)
    half = np.arange(dim // 2 + dim % 2)
    freq = 1.0 / np.power(10000.0, 2.0 * half / dim)
    angles = positions[..., None] * freq
    out = np.zeros(positions.shape + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles[..., : dim // 2])
    return out


def reinject_positional(context_rows: np.ndarray, union: UnionEncoding,
                        layout: AssembledInput, item: int) -> np.ndarray:
    """The vectors pooled for one item, with its token order added back.

    Returns the query rows, the [SEP] row, and the item's selected union
    rows each shifted by the sinusoid of the token's first occurrence
    position inside the original item.  Raises when a selected union token
    has no recorded position.
    """
    rows = [context_rows[i] for i in range(*layout.query_span)]
    rows.append(context_rows[layout.sep_index])
    dim = context_rows.shape[1]
    start = layout.union_span[0]
    positions = union.item_positions[item]
    for offset, token in enumerate(union.union_ids):
        if union.item_masks[item, union.query_length + 1 + offset]:
            if token not in positions:
                raise ValueError(
                    f"no recorded position for token {token} of item {item}")
            rows.append(context_rows[start + offset]
                        + sinusoid_encoding(np.array(positions[token]), dim))
    return np.stack(rows)


def pooling_offsets(union: UnionEncoding, dim: int) -> np.ndarray:
    """Per-item constant added to mean-pooled rows when re-injection is on.

    Mean-pooling commutes with the constant sinusoid shift, so instead of
    adjusting every context row we add, per item, the mean of the selected
    tokens' sinusoids over the full pooled count.
    """
    n_items = union.n_items
    offsets = np.zeros((n_items, dim))
    for j in range(n_items):
        span = union.union_span_mask(j)
        count = union.item_masks[j].sum()
        for offset, token in enumerate(union.union_ids):
            if span[offset]:
                pos = union.item_positions[j].get(token)
                if pos is None:
                    raise ValueError(
                        f"no recorded position for token {token} of item {j}")
                offsets[j] += sinusoid_encoding(np.array(pos), dim)
        offsets[j] /= count
    return offsets


def save_checkpoint(path: str | os.PathLike, params: ModelParams) -> None:
    """Atomically persist config plus all named parameter arrays."""
    payload = {"__config__": np.frombuffer(
        json.dumps(asdict(params.config)).encode(), dtype=np.uint8)}
    payload.update(params.arrays)
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npz.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **payload)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike) -> ModelParams:
    with np.load(path) as data:
        config = EncoderConfig(**json.loads(
            data["__config__"].tobytes().decode()))
        arrays = {name: data[name] for name in data.files
                  if name != "__config__"}
    return ModelParams(config, arrays)
