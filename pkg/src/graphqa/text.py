"""Tokenisation and the frozen word-embedding table."""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

START = "<s>"
END = "<f>"
ENTITY_SYMBOL = "<e>"
UNK = "<unk>"
QNODE = "<q>"
VARNODE = "<var>"
ARGMAX_TOKEN = "<argmax>"
ARGMIN_TOKEN = "<argmin>"
SPECIAL_TOKENS = (START, END, ENTITY_SYMBOL, UNK, QNODE, VARNODE, ARGMAX_TOKEN, ARGMIN_TOKEN)

_TOKEN_RE = re.compile(r"<[a-z]+>|[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation."""
    return _TOKEN_RE.findall(text.lower())


def replace_entities(tokens: Sequence[str], mentions: Iterable[Sequence[str]]) -> list[str]:
    """Swap every occurrence of a mention's token span for the entity symbol."""
    out = list(tokens)
    for m in sorted((list(m) for m in mentions), key=len, reverse=True):
        if not m:
            continue
        i = 0
        while i <= len(out) - len(m):
            if out[i : i + len(m)] == m:
                out[i : i + len(m)] = [ENTITY_SYMBOL]
            i += 1
    return out


class EmbeddingError(ValueError):
    pass


class EmbeddingTable:
    """Vocabulary plus a fixed ``|V| x d`` matrix; special rows live at the top."""

    def __init__(self, words: Sequence[str], vectors: np.ndarray, seed: int = 0):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or len(words) != vectors.shape[0]:
            raise EmbeddingError("words and vectors disagree in length")
        dim = vectors.shape[1]
        scale = float(vectors.std()) if vectors.size else 0.4
        rng = np.random.default_rng(seed)
        special = rng.normal(0.0, scale or 0.4, size=(len(SPECIAL_TOKENS), dim))
        self.index: dict[str, int] = {t: i for i, t in enumerate(SPECIAL_TOKENS)}
        rows = [special]
        keep = []
        for w, vec in zip(words, vectors):
            w = w.lower()
            if w in self.index:
                continue
            self.index[w] = len(self.index)
            keep.append(vec)
        if keep:
            rows.append(np.asarray(keep))
        self.matrix = np.concatenate(rows, axis=0)
        self.dim = dim

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.index

    def ids(self, tokens: Iterable[str]) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(t.lower() if not t.startswith("<") else t, unk) for t in tokens]

    def lookup(self, tokens: Iterable[str], dtype=np.float32) -> np.ndarray:
        return self.matrix[self.ids(tokens)].astype(dtype)

    def sum_vectors(self, tokens: Sequence[str], dtype=np.float32) -> np.ndarray:
        if not tokens:
            return np.zeros(self.dim, dtype=dtype)
        return self.lookup(tokens, np.float64).sum(axis=0).astype(dtype)

    @classmethod
    def load(cls, path: Union[str, Path], dim: Optional[int] = 50, seed: int = 0) -> "EmbeddingTable":
        """Read a GloVe-style text file: ``token v1 ... vd`` per line."""
        words, vecs = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split()
                if not parts:
                    continue
                try:
                    vec = [float(x) for x in parts[1:]]
                except ValueError:
                    raise EmbeddingError(f"line {lineno}: non-numeric value") from None
                if dim is None:
                    dim = len(vec)
                if len(vec) != dim:
                    raise EmbeddingError(f"line {lineno}: expected {dim} values, got {len(vec)}")
                words.append(parts[0])
                vecs.append(vec)
        return cls(words, np.asarray(vecs, dtype=np.float64).reshape(-1, dim or 50), seed=seed)

    def save(self, path: Union[str, Path]) -> None:
        """Write the non-special rows back out in the loader's format."""
        inv = sorted(self.index.items(), key=lambda kv: kv[1])
        with open(path, "w", encoding="utf-8") as fh:
            for tok, i in inv:
                if tok in SPECIAL_TOKENS:
                    continue
                fh.write(tok + " " + " ".join(f"{x:.6f}" for x in self.matrix[i]) + "\n")
