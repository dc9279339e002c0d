"""
Semi-autoregressive chunk sampler.

Chunks are generated one after another. Chunk c starts from its shuffled
base noise at t_start(c) and is integrated to t = 0 with uniform Euler
steps on dx/dt = -v. Its clean keys/values are then sparsified and stored
in the bank, where later chunks find them as context.

Usage:
    result = generate_video(prompts, n, cfg, schedule, cache_cfg, params, RandomSource(7))
    result.chunks[0].latents
    result.provenance.show()
"""

import contextlib
import dataclasses
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from chunkvid import tensor as T
from chunkvid.console import console
from chunkvid.denoiser import DenoiserConfig, LatentChunk, Params, encode_chunk_kv, forward
from chunkvid.errors import DimensionError, RangeError
from chunkvid.kv_cache import CacheConfig, KVBank, KVContext, assemble_context, bank_insert, build_sparse_kv
from chunkvid.noise_schedule import ScheduleParams, ShuffleConfig, chunk_noise, noise_level, start_time
from chunkvid.provenance import ProvenanceLog
from chunkvid.random_source import RandomSource
from chunkvid.tensor import Tensor


@dataclass
class GenerationResult:
    chunks: List[LatentChunk]
    bank: KVBank
    provenance: ProvenanceLog

    @property
    def latents(self) -> Tensor:
        return T.concatenate([c.latents for c in self.chunks], axis=0)


def default_shuffle(cfg: DenoiserConfig) -> ShuffleConfig:
    return ShuffleConfig(s=min(4, cfg.chunk_len), frames_per_chunk=cfg.chunk_len)


def generate_chunk(
    context,
    prompt,
    t_start: float,
    cfg: DenoiserConfig,
    params: Params,
    rng: Optional[RandomSource] = None,
    noise=None,
    chunk_index: int = 0,
    steps: Optional[int] = None,
) -> LatentChunk:
    """
    Integrate one chunk from t_start down to 0.

    The start state is t_start·noise. `noise` defaults to a standard-normal
    draw from `rng`.
    """
    if not 0.0 < t_start <= 1.0:
        raise RangeError(f"t_start must be in (0, 1], got {t_start}")
    if noise is None:
        if rng is None:
            raise RangeError("generate_chunk needs either rng or noise")
        noise = Tensor(rng.normal((cfg.chunk_len, cfg.latent_dim)))
    noise = T.as_tensor(noise)
    if noise.shape != (cfg.chunk_len, cfg.latent_dim):
        raise DimensionError("generate_chunk noise", noise.shape, (cfg.chunk_len, cfg.latent_dim))

    n_steps = steps or cfg.sample_steps
    dt = t_start / n_steps
    x = T.scale(noise, t_start)
    for k in range(n_steps):
        t = t_start - k * dt
        v = forward(x, t, context, prompt, cfg, params)
        x = T.sub(x, T.scale(v, dt))

    return LatentChunk(latents=x, prompt_embedding=np.asarray(
        prompt.data if isinstance(prompt, Tensor) else prompt), chunk_index=chunk_index)


def generate_video(
    prompts: Sequence,
    n: int,
    cfg: DenoiserConfig,
    schedule: ScheduleParams,
    cache_cfg: CacheConfig,
    params: Params,
    rng: RandomSource,
    shuffle: Optional[ShuffleConfig] = None,
    limit: Optional[int] = None,
    track: bool = False,
    steps: Optional[int] = None,
) -> GenerationResult:
    """
    Generate the first `limit` (default all n) chunks of an n-chunk video.

    With `track`, the graph spans every Euler step and the cached context so
    losses on the output reach the parameters. Otherwise runs under no_grad.
    """
    if len(prompts) != n:
        raise DimensionError("generate_video prompts", (len(prompts),), (n,))
    if schedule.n_chunks != n:
        schedule = dataclasses.replace(schedule, n_chunks=n)
    shuffle = shuffle or default_shuffle(cfg)
    if shuffle.frames_per_chunk != cfg.chunk_len:
        raise DimensionError("generate_video shuffle frames",
                             (shuffle.frames_per_chunk,), (cfg.chunk_len,))
    count = n if limit is None else limit
    if not 0 <= count <= n:
        raise RangeError(f"limit must be in [0, {n}], got {limit}")

    bank = KVBank(capacity=cache_cfg.capacity)
    log = ProvenanceLog.start(
        seed=rng.seed,
        cache_mode=cache_cfg.mode,
        seq_ctx_len=cache_cfg.seq_ctx_len,
        top_l=cache_cfg.top_l,
        capacity=cache_cfg.capacity,
    )
    chunks: List[LatentChunk] = []

    recording = contextlib.nullcontext() if track else T.no_grad()
    with recording:
        for c in range(count):
            prompt = prompts[c]
            context: KVContext = assemble_context(bank, c, cache_cfg, prompt)
            t0 = start_time(schedule, c)
            noise = chunk_noise(rng, c, n, shuffle, (cfg.latent_dim,))

            chunk = generate_chunk(context, prompt, t0, cfg, params,
                                   noise=noise, chunk_index=c, steps=steps)
            kv = encode_chunk_kv(chunk.latents, context, prompt, cfg, params)
            sparse = build_sparse_kv(kv.keys, kv.values, kv.queries, cache_cfg,
                                     rng.stream("probe", c))
            bank_insert(bank, c, sparse, chunk.prompt_embedding)
            chunks.append(chunk)

            log.log_chunk(
                chunk_index=c,
                seq_ctx=list(context.seq_ctx),
                semantic=list(context.semantic),
                similarities=[round(s, 6) for s in context.similarities],
                kept_tokens=sparse.kept,
                source_tokens=sparse.source_len,
                context_tokens=context.n_tokens,
                noise_level=noise_level(schedule, c),
                start_time=t0,
                bank_size=len(bank),
            )
            console.step(
                f"Chunk {c}: kept {sparse.kept}/{sparse.source_len} tokens, "
                f"context {context.n_tokens} tokens from {list(context.chunk_indices)}"
            )
            if context.semantic:
                console.debug(log.format_context(log.chunks[-1]))

    return GenerationResult(chunks=chunks, bank=bank, provenance=log)
