"""Quad-word feature extraction from raw object content."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_FEATURE_WORDS = 256
WORD_BYTES = 8


@dataclass(frozen=True)
class FeatureVector:
    words: tuple[int, ...]
    label: int | None = None


def content_to_words(content: bytes, n_words: int, truncate: bool = True) -> np.ndarray:
    """Split ``content`` into little-endian u64 words, zero padded to ``n_words``.

    A trailing partial word is padded with zero bytes. Content longer than
    ``8 * n_words`` is truncated unless ``truncate`` is false.
    """
    limit = WORD_BYTES * n_words
    if len(content) > limit:
        if not truncate:
            raise ValueError(f"content of {len(content)} bytes exceeds {n_words} quad words")
        content = content[:limit]
    buf = bytearray(limit)
    buf[: len(content)] = content
    return np.frombuffer(bytes(buf), dtype="<u8").astype(np.uint64)


def extract_features(content: bytes, n_words: int = DEFAULT_FEATURE_WORDS, label=None) -> FeatureVector:
    words = content_to_words(content, n_words)
    return FeatureVector(tuple(int(w) for w in words), label)


def stack_features(vectors) -> np.ndarray:
    """Pack feature vectors of equal length into an ``(n, L)`` uint64 matrix."""
    rows = [v.words if isinstance(v, FeatureVector) else v for v in vectors]
    if not rows:
        return np.zeros((0, 0), dtype=np.uint64)
    return np.array(rows, dtype=np.uint64)
