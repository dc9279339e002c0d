"""
Prompt embeddings.

The default embedder hashes lowercase word tokens into a fixed number of
signed buckets (a bag-of-tokens feature hash). Any callable mapping a
string to a 1-D float array can be plugged in instead.
"""

import hashlib
import re
from typing import Callable, Sequence

import numpy as np

from chunkvid.errors import DimensionError

Embedder = Callable[[str], np.ndarray]

_TOKEN = re.compile(r"[a-z0-9]+")


class HashingEmbedder:
    """Deterministic bag-of-tokens embedder of dimension `dim`."""

    def __init__(self, dim: int = 64):
        self.dim = dim

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token in _TOKEN.findall(text.lower()):
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            word = int.from_bytes(digest, "little")
            sign = 1.0 if (word >> 63) & 1 == 0 else -1.0
            vec[word % self.dim] += sign
        return vec


def mean_embed(prompts: Sequence[str], embedder: Embedder) -> np.ndarray:
    """Embed each prompt string and average."""
    if isinstance(prompts, str):
        prompts = [prompts]
    vectors = [np.asarray(embedder(p), dtype=np.float64) for p in prompts]
    if not vectors:
        raise DimensionError("mean_embed (no prompts)", ())
    return np.mean(np.stack(vectors), axis=0)
