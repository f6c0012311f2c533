"""Dataset format, loading, and synthetic corpus generation.

One JSON object per line: {"query": str, "items": [str, ...],
"labels": [float, ...]} with an optional "id".  Labels are soft relevance
scores in [0, 1] (e.g. produced by a stronger teacher model).

The synthetic generator plants two controllable structures: a corpus-wide
token-overlap level (so union-compression statistics can be dialed in),
and query-token sharing for relevant items (so the ranking task is
learnable from token overlap).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .tokenizer import TokenSequence, Vocabulary, tokenize

__all__ = [
    "RankingInstance",
    "LoadResult",
    "load_dataset",
    "write_jsonl",
    "synthesize_dataset",
]


@dataclass(frozen=True)
class RankingInstance:
    """One query, its candidate items, and their target scores."""

    query_id: str
    query_text: str
    query: TokenSequence
    item_texts: tuple[str, ...]
    items: tuple[TokenSequence, ...]
    targets: np.ndarray

    @property
    def n_items(self) -> int:
        return len(self.items)


@dataclass
class LoadResult:
    instances: list[RankingInstance] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.instances)

    def __len__(self):
        return len(self.instances)


def _validate_row(row: dict) -> str | None:
    if not isinstance(row.get("query"), str):
        return "missing or non-string 'query'"
    items = row.get("items")
    labels = row.get("labels")
    if not isinstance(items, list) or not all(isinstance(i, str)
                                              for i in items):
        return "'items' must be a list of strings"
    if not isinstance(labels, list):
        return "'labels' must be a list of numbers"
    if len(items) != len(labels):
        return f"{len(items)} items but {len(labels)} labels"
    if len(items) == 0:
        return "empty item list"
    for label in labels:
        if not isinstance(label, (int, float)) or not np.isfinite(label):
            return f"non-numeric label {label!r}"
        if not 0.0 <= label <= 1.0:
            return f"label {label} outside [0, 1]"
    return None


def load_dataset(path: str | os.PathLike, vocab: Vocabulary,
                 strict: bool = False) -> LoadResult:
    """Parse and tokenize a JSONL dataset.

    Malformed lines are rejected with their 1-based line number recorded
    in ``errors`` (or raised immediately when ``strict``).
    """
    result = LoadResult()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                problem = f"line {line_no}: invalid JSON ({exc.msg})"
            else:
                detail = _validate_row(row)
                problem = f"line {line_no}: {detail}" if detail else None
            if problem:
                if strict:
                    raise ValueError(problem)
                result.errors.append(problem)
                continue
            result.instances.append(RankingInstance(
                query_id=str(row.get("id", f"line{line_no}")),
                query_text=row["query"],
                query=tokenize(row["query"], vocab),
                item_texts=tuple(row["items"]),
                items=tuple(tokenize(t, vocab) for t in row["items"]),
                targets=np.asarray(row["labels"], dtype=np.float64),
            ))
    return result


def write_jsonl(rows: list[dict], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _word(index: int) -> str:
    return f"w{index:05d}"


def synthesize_dataset(n_queries: int, n_items: int, overlap: float,
                       vocab_size: int, seed: int, *,
                       item_len: int = 5, query_len: int = 3,
                       relevant_per_query: int = 3,
                       planted_relevance: bool = True,
                       require_distinct_items: bool = False) -> list[dict]:
    """Generate ranking rows with a planted overlap level and relevance.

    ``overlap`` in [0, 1] maps to a target total-tokens / union-size ratio
    of 1 + overlap * (n_items - 1): 0 makes item token sets pairwise
    disjoint, 1 makes them identical.  Items are dealt from a per-query
    token pool sized so the realized ratio matches the target (exactly,
    when relevance planting is off).

    With relevance planting on, ``relevant_per_query`` items have
    min(query_len, max(1, item_len // 2)) of their slots overwritten with
    distinct query tokens and receive labels in [0.65, 0.95]; the rest get
    [0.05, 0.35].  Query words are themselves drawn from the per-query
    pool, so planting never grows the union and the overlap target stays
    honest; relevance is signalled by items carrying the query's tokens.
    """
    if not 0.0 <= overlap <= 1.0:
        raise ValueError(f"overlap must be in [0, 1], got {overlap}")
    if n_items < 1 or n_queries < 1:
        raise ValueError("need at least one query and one item")
    if require_distinct_items and overlap == 1.0 and n_items > 1:
        raise ValueError(
            "overlap 1.0 forces identical items; distinct items infeasible")
    if planted_relevance and not 0 < relevant_per_query <= n_items:
        raise ValueError("relevant_per_query must be in 1..n_items")

    ratio = 1.0 + overlap * (n_items - 1)
    pool_size = int(round(n_items * item_len / ratio))
    pool_size = min(max(pool_size, item_len, query_len), n_items * item_len)
    universe = vocab_size - 4
    if pool_size > universe:
        raise ValueError(
            f"vocab_size {vocab_size} too small: need {pool_size + 4}")

    rng = np.random.default_rng(seed)
    rows = []
    for qi in range(n_queries):
        pool = [_word(w) for w in rng.choice(universe, size=pool_size,
                                             replace=False)]
        query_words = [pool[w] for w in rng.choice(pool_size, size=query_len,
                                                   replace=False)]
        items = []
        for j in range(n_items):
            start = (j * item_len) % pool_size
            window = [pool[(start + t) % pool_size] for t in range(item_len)]
            items.append(window)
        labels = list(rng.uniform(0.05, 0.35, size=n_items))
        if planted_relevance:
            chosen = rng.choice(n_items, size=relevant_per_query,
                                replace=False)
            n_copy = min(query_len, max(1, item_len // 2))
            for j in chosen:
                shared = rng.choice(query_len, size=n_copy, replace=False)
                for slot, qt in enumerate(shared):
                    items[j][slot] = query_words[qt]
                labels[j] = float(rng.uniform(0.65, 0.95))
        rows.append({
            "id": f"q{qi:05d}",
            "query": " ".join(query_words),
            "items": [" ".join(it) for it in items],
            "labels": [round(float(v), 6) for v in labels],
        })
    return rows
