"""
Semantic Sparse KV Cache.

Each generated chunk leaves behind only its salient key/value tokens:
probe queries (the most recent tokens plus a random sample of older ones)
attend over the chunk under a causal mask, the attention mass is
aggregated into an importance vector, and the smallest set of tokens that
covers a fraction `tau` of the total importance is kept.

Kept caches live in a bank keyed by chunk index together with the chunk's
prompt embedding. The context for a new chunk is the most recent
`seq_ctx_len` chunks followed by the `top_l` remaining chunks whose prompt
embeddings are most similar to the new prompt.

Cache modes:
- semantic: sparse retention + recent chunks + semantic retrieval
- dynamic:  sparse retention + recent chunks
- rolling:  full KV of the recent chunks only
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Union

import numpy as np

from chunkvid import tensor as T
from chunkvid.errors import (
    ConfigError,
    DegenerateImportanceError,
    DimensionError,
    FormatError,
    NumericError,
    RangeError,
    ZeroNormError,
)
from chunkvid.random_source import RandomSource
from chunkvid.tensor import Tensor

CACHE_MODES = ("semantic", "dynamic", "rolling")

BANK_MAGIC = b"LVKV"
BANK_VERSION = 1


@dataclass
class CacheConfig:
    """Configuration for sparse retention and context assembly."""
    tau: float = 0.98
    top_l: int = 2
    probe_recent: int = 64
    probe_random: int = 64
    seq_ctx_len: int = 2

    # Maximum bank entries; None keeps every chunk
    capacity: Optional[int] = None

    mode: str = "semantic"

    def validate(self) -> "CacheConfig":
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}", section="cache")
        if self.top_l < 0:
            raise ConfigError(f"top_l must be >= 0, got {self.top_l}", section="cache")
        if self.probe_recent < 1 or self.probe_random < 1:
            raise ConfigError("probe counts must be >= 1", section="cache")
        if self.seq_ctx_len < 0:
            raise ConfigError("seq_ctx_len must be >= 0", section="cache")
        if self.capacity is not None and self.capacity < 1:
            raise ConfigError("capacity must be >= 1 when set", section="cache")
        if self.mode not in CACHE_MODES:
            raise ConfigError(
                f"mode must be one of {', '.join(CACHE_MODES)}, got {self.mode!r}",
                section="cache",
            )
        return self

    @property
    def effective_l(self) -> int:
        """Semantic retrieval count after applying the cache mode."""
        return self.top_l if self.mode == "semantic" else 0

    @property
    def max_context_chunks(self) -> int:
        return self.seq_ctx_len + self.effective_l


# =============================================================================
# Cache Types
# =============================================================================

@dataclass
class SparseKV:
    """Retained key/value tokens of one chunk. Shapes: heads × kept × d."""
    keys: Tensor
    values: Tensor
    kept_indices: tuple
    source_len: int

    def __post_init__(self):
        self.kept_indices = tuple(int(i) for i in self.kept_indices)
        if self.keys.ndim != 3 or self.keys.shape != self.values.shape:
            raise DimensionError("SparseKV", self.keys.shape, self.values.shape)
        if len(self.kept_indices) != self.keys.shape[1]:
            raise DimensionError("SparseKV kept_indices", (len(self.kept_indices),), self.keys.shape)
        if any(b <= a for a, b in zip(self.kept_indices, self.kept_indices[1:])):
            raise RangeError("kept_indices must be strictly ascending")
        if self.kept_indices and not 0 <= self.kept_indices[0] <= self.kept_indices[-1] < self.source_len:
            raise RangeError(f"kept_indices must lie in [0, {self.source_len})")

    @property
    def heads(self) -> int:
        return self.keys.shape[0]

    @property
    def kept(self) -> int:
        return self.keys.shape[1]

    @property
    def head_dim(self) -> int:
        return self.keys.shape[2]


@dataclass
class BankEntry:
    kv: SparseKV
    embedding: np.ndarray


class KVBank:
    """
    Global map from chunk index to (SparseKV, prompt embedding).

    Single writer; readers may run concurrently between insertions.
    When `capacity` is set, inserting past it evicts the lowest chunk index.
    """

    def __init__(self, capacity: Optional[int] = None):
        self.capacity = capacity
        self._entries: Dict[int, BankEntry] = {}
        self.embed_dim: Optional[int] = None
        self.peak_size = 0
        self.evicted: List[int] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, chunk_idx: int) -> bool:
        return chunk_idx in self._entries

    def __getitem__(self, chunk_idx: int) -> BankEntry:
        return self._entries[chunk_idx]

    def indices(self) -> List[int]:
        return sorted(self._entries)

    @property
    def total_tokens(self) -> int:
        return sum(e.kv.kept for e in self._entries.values())

    def insert(self, chunk_idx: int, kv: SparseKV, embedding) -> None:
        emb = np.ravel(np.asarray(embedding.data if isinstance(embedding, Tensor) else embedding,
                                  dtype=np.float64))
        if self.embed_dim is not None and emb.shape[0] != self.embed_dim:
            raise DimensionError("bank_insert embedding", (self.embed_dim,), emb.shape)
        self.embed_dim = emb.shape[0]
        self._entries[int(chunk_idx)] = BankEntry(kv=kv, embedding=emb.copy())

        while self.capacity is not None and len(self._entries) > self.capacity:
            oldest = min(self._entries)
            del self._entries[oldest]
            self.evicted.append(oldest)
        self.peak_size = max(self.peak_size, len(self._entries))


@dataclass
class KVContext:
    """Assembled context K*, V* plus where its tokens came from."""
    keys: Optional[Tensor] = None
    values: Optional[Tensor] = None
    seq_ctx: tuple = ()
    semantic: tuple = ()
    similarities: tuple = ()

    def __iter__(self) -> Iterator[Optional[Tensor]]:
        yield self.keys
        yield self.values

    @property
    def is_empty(self) -> bool:
        return self.keys is None

    @property
    def chunk_indices(self) -> tuple:
        return tuple(self.seq_ctx) + tuple(self.semantic)

    @property
    def n_tokens(self) -> int:
        return 0 if self.keys is None else self.keys.shape[1]


# =============================================================================
# Salient Token Retention
# =============================================================================

def select_probe_indices(q_len: int, cfg: CacheConfig, rng: RandomSource) -> List[int]:
    """Last `probe_recent` positions plus distinct random older positions, ascending."""
    if q_len < 1:
        raise RangeError(f"q_len must be >= 1, got {q_len}")
    recent_start = max(0, q_len - cfg.probe_recent)
    n_random = min(cfg.probe_random, recent_start)
    older = rng.sample_distinct(recent_start, n_random)
    return sorted(set(older.tolist()) | set(range(recent_start, q_len)))


def importance_vector(attention: Union[Tensor, np.ndarray]) -> Tensor:
    """
    Aggregate attention (heads × probe × q_len) into per-token importance.

    The probe/head sum `s` is turned into its running mean:
    m[j] = mean(s[0..j]).
    """
    a = np.asarray(attention.data if isinstance(attention, Tensor) else attention,
                   dtype=np.float64)
    if a.ndim != 3:
        raise DimensionError("importance_vector", a.shape)
    if not np.isfinite(a).all():
        raise NumericError("non-finite attention entries")
    s = a.sum(axis=(0, 1))
    m = np.cumsum(s) / np.arange(1, s.shape[0] + 1)
    return Tensor(np.maximum(m, 0.0))


def cover_count(m: Union[Tensor, np.ndarray, Sequence[float]], tau: float) -> int:
    """Smallest k such that the k largest entries of m sum to >= tau * sum(m)."""
    if not 0.0 < tau <= 1.0:
        raise RangeError(f"tau must be in (0, 1], got {tau}")
    arr = np.ravel(np.asarray(m.data if isinstance(m, Tensor) else m, dtype=np.float64))
    if (arr < 0).any():
        raise RangeError("importance must be nonnegative")
    prefix = np.cumsum(np.sort(arr)[::-1])
    if prefix.size == 0 or prefix[-1] <= 0.0:
        raise DegenerateImportanceError()
    if tau == 1.0:
        return int(np.count_nonzero(arr))
    return int(np.argmax(prefix >= tau * prefix[-1])) + 1


def top_indices(m: np.ndarray, count: int) -> np.ndarray:
    """Indices of the `count` largest entries (ties to the later token), ascending."""
    m = np.ravel(m)
    order = np.lexsort((-np.arange(m.shape[0]), -m))
    return np.sort(order[:count])


def causal_probe_mask(probe: Sequence[int], q_len: int) -> np.ndarray:
    """0 where the probe at position p may see token j (j <= p), -inf elsewhere."""
    p = np.asarray(probe)[:, None]
    j = np.arange(q_len)[None, :]
    return np.where(j <= p, 0.0, -np.inf)


def build_sparse_kv(
    K: Tensor,
    V: Tensor,
    Q: Tensor,
    cfg: CacheConfig,
    rng: RandomSource,
) -> SparseKV:
    """Keep the salient tokens of one chunk's K/V (heads × q_len × d)."""
    if K.ndim != 3 or K.shape != V.shape:
        raise DimensionError("build_sparse_kv K/V", K.shape, V.shape)
    if Q.ndim != 3 or Q.shape[0] != K.shape[0] or Q.shape[2] != K.shape[2]:
        raise DimensionError("build_sparse_kv Q/K", Q.shape, K.shape)
    if Q.shape[1] != K.shape[1]:
        raise DimensionError("build_sparse_kv (queries and keys must cover the same tokens)",
                             Q.shape, K.shape)

    q_len = K.shape[1]
    if q_len == 1 or cfg.mode == "rolling":
        return SparseKV(keys=K, values=V, kept_indices=tuple(range(q_len)), source_len=q_len)

    probe = select_probe_indices(q_len, cfg, rng)
    d = K.shape[2]
    logits = np.matmul(Q.data[:, probe, :], np.swapaxes(K.data, -1, -2)) / np.sqrt(d)
    mask = np.broadcast_to(causal_probe_mask(probe, q_len), logits.shape)
    with T.no_grad():
        attention = T.masked_softmax(Tensor(logits), mask)

    m = importance_vector(attention)
    keep = top_indices(m.data, cover_count(m, cfg.tau))
    return SparseKV(
        keys=T.index_select(K, keep, axis=1),
        values=T.index_select(V, keep, axis=1),
        kept_indices=tuple(keep.tolist()),
        source_len=q_len,
    )


# =============================================================================
# Bank Operations
# =============================================================================

def bank_insert(bank: KVBank, chunk_idx: int, kv: SparseKV, embedding) -> None:
    bank.insert(chunk_idx, kv, embedding)


def retrieve_semantic(
    bank: KVBank,
    query_embedding,
    l: int,
    exclude: Iterable[int] = (),
) -> List[int]:
    """Up to l bank indices outside `exclude`, most similar prompt first."""
    return [i for i, _ in _ranked_by_similarity(bank, query_embedding, l, exclude)]


def _ranked_by_similarity(bank, query_embedding, l, exclude) -> List[tuple]:
    if l < 0:
        raise RangeError(f"l must be >= 0, got {l}")
    if l == 0:
        return []
    query = np.ravel(np.asarray(
        query_embedding.data if isinstance(query_embedding, Tensor) else query_embedding,
        dtype=np.float64,
    ))
    if not np.any(query):
        raise ZeroNormError()
    skip = set(exclude)
    scored = [
        (i, T.cosine_similarity(query, bank[i].embedding))
        for i in bank.indices()
        if i not in skip
    ]
    scored.sort(key=lambda pair: (-pair[1], -pair[0]))
    return scored[:l]


def assemble_context(
    bank: KVBank,
    current_idx: int,
    cfg: CacheConfig,
    query_embedding=None,
) -> KVContext:
    """
    Build K*, V* for chunk `current_idx`.

    Token order: seq_ctx chunks ascending, then semantic chunks by
    descending similarity. Only chunks with index < current_idx are used.
    Semantic mode with top_l > 0 needs `query_embedding`.
    """
    history = [i for i in bank.indices() if i < current_idx]
    seq_ctx = history[-cfg.seq_ctx_len:] if cfg.seq_ctx_len > 0 else []

    if cfg.effective_l > 0 and query_embedding is None:
        raise RangeError(f"semantic retrieval (top_l={cfg.top_l}) needs a query embedding")

    ranked: List[tuple] = []
    if cfg.effective_l > 0:
        future = {i for i in bank.indices() if i >= current_idx}
        ranked = _ranked_by_similarity(
            bank, query_embedding, cfg.effective_l, set(seq_ctx) | future
        )

    order = list(seq_ctx) + [i for i, _ in ranked]
    if not order:
        return KVContext()

    return KVContext(
        keys=T.concatenate([bank[i].kv.keys for i in order], axis=1),
        values=T.concatenate([bank[i].kv.values for i in order], axis=1),
        seq_ctx=tuple(seq_ctx),
        semantic=tuple(i for i, _ in ranked),
        similarities=tuple(s for _, s in ranked),
    )


# =============================================================================
# Snapshot Files
# =============================================================================

def save_bank(bank: KVBank, path: Union[str, Path]) -> None:
    """
    Write a little-endian bank snapshot.

    Layout: "LVKV", u16 version, u32 count, then per entry: u32 chunk index,
    u32 e, f64×e embedding, u32×3 heads/kept/d, f64 keys, f64 values,
    u32 kept_indices.
    """
    chunks = [struct.pack("<4sHI", BANK_MAGIC, BANK_VERSION, len(bank))]
    for idx in bank.indices():
        entry = bank[idx]
        kv = entry.kv
        chunks.append(struct.pack("<II", idx, entry.embedding.shape[0]))
        chunks.append(entry.embedding.astype("<f8").tobytes())
        chunks.append(struct.pack("<III", kv.heads, kv.kept, kv.head_dim))
        chunks.append(kv.keys.data.astype("<f8").tobytes())
        chunks.append(kv.values.data.astype("<f8").tobytes())
        chunks.append(np.asarray(kv.kept_indices, dtype="<u4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class BinaryReader:
    """Bounds-checked little-endian reads; every failure is a FormatError."""

    def __init__(self, path: str, payload: bytes):
        self.path = path
        self.payload = payload
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.payload):
            raise FormatError(self.path, "truncated file")
        out = self.payload[self.offset:self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self, n: int, what: str) -> str:
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(self.path, f"{what} is not UTF-8 ({exc.reason})") from exc

    @property
    def remaining(self) -> int:
        return len(self.payload) - self.offset

    def array(self, dtype: str, count: int) -> np.ndarray:
        width = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(width * count), dtype=dtype).astype(np.float64
                                                                          if "f" in dtype
                                                                          else np.int64)


def load_bank(path: Union[str, Path], capacity: Optional[int] = None) -> KVBank:
    """Read a snapshot written by `save_bank`. source_len becomes last kept index + 1."""
    reader = BinaryReader(str(path), Path(path).read_bytes())
    magic, version, count = reader.unpack("<4sHI")
    if magic != BANK_MAGIC:
        raise FormatError(str(path), f"bad magic {magic!r}, expected {BANK_MAGIC!r}")
    if version != BANK_VERSION:
        raise FormatError(str(path), f"unsupported bank version {version}")

    bank = KVBank(capacity=capacity)
    for _ in range(count):
        idx, e = reader.unpack("<II")
        embedding = reader.array("<f8", e)
        heads, kept, d = reader.unpack("<III")
        keys = reader.array("<f8", heads * kept * d).reshape(heads, kept, d)
        values = reader.array("<f8", heads * kept * d).reshape(heads, kept, d)
        kept_indices = reader.array("<u4", kept)
        source_len = int(kept_indices[-1]) + 1 if kept else 0
        kv = SparseKV(Tensor(keys), Tensor(values), tuple(kept_indices.tolist()), source_len)
        bank.insert(idx, kv, embedding)
    return bank
