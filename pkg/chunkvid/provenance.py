"""
Context provenance for generated videos.

Records, for every generated chunk, which earlier chunks supplied its
context (recent and semantically retrieved), how many tokens were kept
from it, and the start time it was sampled from. The log is written next
to the generated video as JSON and can be audited for causality.

Usage:
    log = ProvenanceLog.start(seed=7, cache_mode="semantic", seq_ctx_len=2, top_l=2)
    log.log_chunk(chunk_index=0, seq_ctx=[], semantic=[], ...)
    log.save("runs/video.provenance.json")
    log.show()
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Union

from chunkvid.console import console
from chunkvid.errors import FormatError


# =============================================================================
# Chunk Records
# =============================================================================

@dataclass
class ChunkProvenance:
    """Context sources of a single generated chunk."""
    chunk_index: int
    seq_ctx: List[int] = field(default_factory=list)
    semantic: List[int] = field(default_factory=list)
    similarities: List[float] = field(default_factory=list)
    kept_tokens: int = 0
    source_tokens: int = 0
    context_tokens: int = 0
    noise_level: float = 0.0
    start_time: float = 0.0
    bank_size: int = 0

    @property
    def sources(self) -> List[int]:
        return list(self.seq_ctx) + list(self.semantic)

    @property
    def retention(self) -> float:
        """Fraction of the chunk's tokens kept in the bank."""
        if self.source_tokens == 0:
            return 0.0
        return self.kept_tokens / self.source_tokens


@dataclass
class ProvenanceLog:
    """All chunk records of one generation session."""
    session_id: str
    seed: int = 0
    cache_mode: str = "semantic"
    seq_ctx_len: int = 2
    top_l: int = 2
    capacity: Optional[int] = None
    chunks: List[ChunkProvenance] = field(default_factory=list)

    @classmethod
    def start(cls, seed: int, **settings) -> "ProvenanceLog":
        """Open a log whose id is a digest of (seed, settings); no wall-clock fields."""
        payload = json.dumps({"seed": seed, **settings}, sort_keys=True)
        digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=6).hexdigest()
        return cls(session_id=digest, seed=seed, **settings)

    def log_chunk(self, **record) -> ChunkProvenance:
        entry = ChunkProvenance(**record)
        self.chunks.append(entry)
        return entry

    @property
    def peak_bank_size(self) -> int:
        return max((c.bank_size for c in self.chunks), default=0)

    @property
    def mean_retention(self) -> float:
        if not self.chunks:
            return 0.0
        return sum(c.retention for c in self.chunks) / len(self.chunks)

    # -- checks -------------------------------------------------------------

    def audit(self) -> List[str]:
        """Return a description of every causality or cardinality violation."""
        problems = []
        limit_semantic = self.top_l if self.cache_mode == "semantic" else 0
        for c in self.chunks:
            future = [i for i in c.sources if i >= c.chunk_index]
            if future:
                problems.append(f"chunk {c.chunk_index}: context from future chunks {future}")
            if len(c.seq_ctx) > self.seq_ctx_len:
                problems.append(
                    f"chunk {c.chunk_index}: {len(c.seq_ctx)} recent chunks, limit {self.seq_ctx_len}"
                )
            if len(c.semantic) > limit_semantic:
                problems.append(
                    f"chunk {c.chunk_index}: {len(c.semantic)} retrieved chunks, limit {limit_semantic}"
                )
            overlap = set(c.seq_ctx) & set(c.semantic)
            if overlap:
                problems.append(f"chunk {c.chunk_index}: chunks {sorted(overlap)} counted twice")
            if self.capacity is not None and c.bank_size > self.capacity:
                problems.append(
                    f"chunk {c.chunk_index}: bank holds {c.bank_size} entries, capacity {self.capacity}"
                )
        return problems

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ProvenanceLog":
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(str(path), f"invalid JSON ({exc.msg})") from exc
        chunks = [ChunkProvenance(**c) for c in data.pop("chunks", [])]
        return cls(chunks=chunks, **data)

    # -- display ------------------------------------------------------------

    def format_context(self, chunk: ChunkProvenance) -> str:
        """Compact context description, e.g. 'seq 3,4 | sem 0(0.91)'."""
        seq = ",".join(str(i) for i in chunk.seq_ctx) or "-"
        sem = ",".join(
            f"{i}({s:.2f})" for i, s in zip(chunk.semantic, chunk.similarities)
        ) or "-"
        return f"seq {seq} | sem {sem}"

    def show(self) -> None:
        rows = [
            [
                str(c.chunk_index),
                self.format_context(c),
                f"{c.kept_tokens}/{c.source_tokens}",
                str(c.context_tokens),
                f"{c.start_time:.3f}",
            ]
            for c in self.chunks
        ]
        console.table(
            f"Context provenance ({self.cache_mode})",
            [("chunk", "bold"), ("context", ""), ("kept", "cyan"),
             ("ctx tokens", ""), ("t_start", "dim")],
            rows,
        )
        console.summary_panel("Generation", {
            "Chunks": str(len(self.chunks)),
            "Peak bank entries": str(self.peak_bank_size),
            "Mean retention": f"{self.mean_retention:.1%}",
        })
