"""Deterministic caption embedding so the whole pipeline runs offline.

Tokens are hashed (crc32, stable across processes) into a fixed-size
bag-of-words vector, then unit-normalized. The empty caption maps to the
zero vector, which doubles as the unconditional embedding for guidance.
A real text encoder can be substituted anywhere a ``CaptionEmbedder`` is
accepted; only ``dim`` and ``embed`` are relied on.
"""

from __future__ import annotations

import re
import zlib

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class CaptionEmbedder:
    def __init__(self, dim: int = 32):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in tokenize(text):
            vec[zlib.crc32(tok.encode()) % self.dim] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec
