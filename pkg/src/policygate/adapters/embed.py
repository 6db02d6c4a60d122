"""Embedding boundary and the seeded hash-projection mock."""
from __future__ import annotations

import hashlib
import re
from typing import Mapping, Sequence

import numpy as np

from .base import AdapterError

_TOKEN = re.compile(r"[a-z0-9]+")


def unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return mat / norms


class EmbeddingAdapter:
    dim: int = 0

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return an ``(len(texts), dim)`` array of unit-norm rows."""
        if not texts:
            raise ValueError("embed() needs at least one text")
        return unit_rows(np.asarray(self._embed(list(texts)), dtype=float))

    def _embed(self, texts: list[str]) -> np.ndarray:
        raise NotImplementedError


class HashEmbedder(EmbeddingAdapter):
    """Signed feature hashing over unigrams and bigrams.

    Word order matters through the bigrams, so shuffled text embeds
    differently from its source.
    """

    def __init__(self, dim: int = 384, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def _bucket(self, feature: str) -> tuple[int, float]:
        digest = hashlib.blake2b(f"{self.seed}:{feature}".encode(), digest_size=8).digest()
        value = int.from_bytes(digest, "little")
        return value % self.dim, 1.0 if (value >> 63) & 1 else -1.0

    def vector(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        tokens = _TOKEN.findall(text.lower())
        features = tokens + [f"{a}_{b}" for a, b in zip(tokens, tokens[1:])]
        if not features:
            features = [f"<raw>{text}"]
        vec = np.zeros(self.dim)
        for feat in features:
            idx, sign = self._bucket(feat)
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0:
            idx, _ = self._bucket(f"<zero>{text}")
            vec[idx] = 1.0
            norm = 1.0
        vec = vec / norm
        self._cache[text] = vec
        return vec

    def _embed(self, texts: list[str]) -> np.ndarray:
        return np.stack([self.vector(t) for t in texts])


class TableEmbedder(EmbeddingAdapter):
    """Fixed text -> vector lookup; used to pin cosine values in tests."""

    def __init__(self, table: Mapping[str, Sequence[float]]):
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}
        self.dim = len(next(iter(self.table.values())))

    def _embed(self, texts: list[str]) -> np.ndarray:
        try:
            return np.stack([self.table[t] for t in texts])
        except KeyError as exc:
            raise AdapterError(f"no vector for {exc.args[0]!r}") from None
