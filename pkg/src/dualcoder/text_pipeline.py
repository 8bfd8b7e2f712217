"""Transcript tokenization, vocabulary, fixed-length encoding and embeddings."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError

PAD = "_PAD_"
UNK = "_UNK_"
PAD_ID = 0
UNK_ID = 1
MAX_TEXT_STEPS = 128
EMBED_DIM = 300
EMBED_INIT_RANGE = 0.05

_EDGE_PUNCT = set(".,!?;:\"'()")


def _split_contraction(word: str) -> list[str]:
    if word.endswith("n't") and len(word) > 3:
        return [word[:-3], "n't"]
    cut = word.rfind("'")
    if 0 < cut < len(word) - 1:
        return [word[:cut], word[cut:]]
    return [word]


def tokenize(transcript: str) -> list[str]:
    """Lowercase, whitespace split, peel edge punctuation, split contractions.

    >>> tokenize("Don't go.")
    ['do', "n't", 'go', '.']
    """
    tokens: list[str] = []
    for chunk in transcript.lower().split():
        lead: list[str] = []
        trail: list[str] = []
        while chunk and chunk[0] in _EDGE_PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in _EDGE_PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.extend(_split_contraction(chunk))
        tokens.extend(reversed(trail))
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    """Dense token ids; ``_PAD_`` is 0 and ``_UNK_`` is 1."""

    tokens: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.tokens[:2] != (PAD, UNK):
            raise ValueError("vocabulary must start with _PAD_, _UNK_")
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    pad_id = PAD_ID
    unk_id = UNK_ID

    def save(self, path) -> None:
        Path(path).write_text("".join(tok + "\n" for tok in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls(tuple(text.split("\n")[:-1]))


def build_vocab(corpus) -> Vocabulary:
    """Vocabulary from token lists, ordered by descending count then lexically."""
    counts = Counter(tok for tokens in corpus for tok in tokens)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts.pop(PAD, None)
    counts.pop(UNK, None)
    ordered = sorted(counts, key=lambda tok: (-counts[tok], tok))
    return Vocabulary((PAD, UNK, *ordered))


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    true_len: int


def encode(tokens, vocab: Vocabulary, max_len: int = MAX_TEXT_STEPS) -> TokenSequence:
    """Map tokens to ids, truncate the tail past ``max_len`` and right-pad."""
    kept = list(tokens)[:max_len]
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[: len(kept)] = [vocab.id_of(tok) for tok in kept]
    return TokenSequence(ids, len(kept))


def load_embeddings(path, vocab: Vocabulary, seed: int, dim: int = EMBED_DIM) -> np.ndarray:
    """V x dim embedding table from a whitespace text file (GloVe style).

    Rows for tokens found in the file are copied; every other row is drawn
    from U(-0.05, 0.05) using ``seed``.  The pad row is always zero.  A
    leading ``"<count> <dim>"`` header line is skipped.  ``path=None`` gives
    a fully random table.
    """
    rng = np.random.default_rng(seed)
    table = rng.uniform(-EMBED_INIT_RANGE, EMBED_INIT_RANGE, size=(len(vocab), dim))
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split()
                if not parts:
                    continue
                if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                    continue
                if len(parts) != dim + 1:
                    raise ParseError(f"expected token plus {dim} values, got {len(parts)} fields", lineno)
                row = vocab.index.get(parts[0])
                if row is None:
                    continue
                try:
                    table[row] = np.array(parts[1:], dtype=np.float64)
                except ValueError as exc:
                    raise ParseError(f"non-numeric embedding value ({exc})", lineno) from None
    table[PAD_ID] = 0.0
    if not np.all(np.isfinite(table)):
        raise ParseError("embedding file contains non-finite values")
    return table
