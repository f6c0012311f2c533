"""Deterministic word-level tokenizer shared by every scoring path.

Normalization is lowercase + ASCII punctuation removal + whitespace split.
Ids are dense, with four reserved slots ([PAD]=0, [UNK]=1, [CLS]=2,
[SEP]=3) ahead of the corpus terms.
"""

from __future__ import annotations

import os
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

__all__ = [
    "PAD_ID", "UNK_ID", "CLS_ID", "SEP_ID",
    "Vocabulary", "TokenSequence",
    "normalize", "build_vocab", "tokenize",
]

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3

_RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize(text: str) -> list[str]:
    """Lowercase, drop ASCII punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


@dataclass(frozen=True)
class Vocabulary:
    """Dense token-string -> id map; unknown strings resolve to [UNK]."""

    entries: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        ids = sorted(self.entries.values())
        if ids != list(range(4, 4 + len(self.entries))):
            raise ValueError("vocabulary ids must be dense starting at 4")

    def __len__(self) -> int:
        return 4 + len(self.entries)

    def id_of(self, term: str) -> int:
        return self.entries.get(term, UNK_ID)

    def save(self, path: str | os.PathLike) -> None:
        """One token per line; line number = id - 4 (reserved implicit)."""
        by_id = sorted(self.entries.items(), key=lambda kv: kv[1])
        with open(path, "w", encoding="utf-8") as fh:
            for term, _ in by_id:
                fh.write(term + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            terms = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls({term: idx + 4 for idx, term in enumerate(terms)})


@dataclass(frozen=True)
class TokenSequence:
    """Token ids plus the text they came from."""

    ids: tuple[int, ...]
    source: str = ""

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


def build_vocab(corpus: Iterable[str], max_size: int) -> Vocabulary:
    """Fill the vocabulary with the most frequent normalized terms.

    ``max_size`` bounds the total size including the four reserved ids;
    frequency ties break lexicographically.  An empty corpus yields a
    reserved-only vocabulary.
    """
    if max_size < 5:
        raise ValueError(f"max_size must be at least 5, got {max_size}")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(normalize(text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [term for term, _ in ranked[: max_size - 4]]
    return Vocabulary({term: idx + 4 for idx, term in enumerate(kept)})


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    """Map normalized terms to ids; out-of-vocabulary terms become [UNK].

    Duplicate terms keep duplicate ids here; deduplication is the union
    builder's job.
    """
    return TokenSequence(tuple(vocab.id_of(t) for t in normalize(text)),
                         source=text)


def detokenize_normal_form(terms: Sequence[str]) -> str:
    """Join normalized terms back into the canonical single-space text."""
    return " ".join(terms)
