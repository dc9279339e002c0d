"""
Chunk-level noise scheduling and boundary noise shuffling.

Each chunk c of an n-chunk video gets a noise level eps_c that grows from
eps_min (first chunk) toward eps_max (last chunk). The sampler starts chunk
c's trajectory at t_start(c) = eps_c / eps_max.

Per-frame base noises come from a fixed seed. Around every chunk boundary
the last `s` frame noises of the earlier chunk and the first `s` of the
later chunk are each shuffled in place, so neighbouring chunks see
correlated but not identical noise.

Usage:
    params = ScheduleParams(kind="cosine", n_chunks=8)
    levels = schedule_levels(params)
    noise = chunk_noise(rng, chunk=3, n_chunks=8, shuffle=ShuffleConfig(), frame_shape=(64,))
"""

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from chunkvid.errors import ConfigError, RangeError
from chunkvid.random_source import RandomSource
from chunkvid.tensor import Tensor

SCHEDULE_KINDS = ("naive", "linear", "cosine", "sigmoid")

TERMINAL_SNR = 0.003


def eps_max_for_snr(snr: float) -> float:
    """
    Interpolation time whose signal-to-noise ratio equals `snr`.

    For x_t = (1 - t)·x + t·eps with unit-variance data and noise,
    SNR(t) = ((1 - t) / t)², so t = 1 / (1 + sqrt(snr)).
    """
    if snr <= 0:
        raise RangeError(f"snr must be > 0, got {snr}")
    return 1.0 / (1.0 + math.sqrt(snr))


DEFAULT_EPS_MAX = eps_max_for_snr(TERMINAL_SNR)
DEFAULT_EPS_MIN = 0.1 * DEFAULT_EPS_MAX


@dataclass
class ScheduleParams:
    """Noise schedule across the chunks of one video."""
    kind: str = "cosine"
    eps_min: float = DEFAULT_EPS_MIN
    eps_max: float = DEFAULT_EPS_MAX
    n_chunks: int = 8

    # Sigmoid steepness; unused by the other kinds
    alpha: float = 10.0

    def validate(self) -> "ScheduleParams":
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(
                f"schedule kind must be one of {', '.join(SCHEDULE_KINDS)}, got {self.kind!r}",
                section="schedule",
            )
        if not self.eps_min > 0:
            raise ConfigError(f"eps_min must be > 0, got {self.eps_min}", section="schedule")
        if self.eps_max < self.eps_min:
            raise ConfigError(
                f"eps_max ({self.eps_max}) must be >= eps_min ({self.eps_min})",
                section="schedule",
            )
        if self.n_chunks < 1:
            raise ConfigError(f"n_chunks must be >= 1, got {self.n_chunks}", section="schedule")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}", section="schedule")
        return self


@dataclass
class ShuffleConfig:
    """Boundary shuffle window `s` within chunks of `frames_per_chunk` frames."""
    s: int = 4
    frames_per_chunk: int = 8

    def validate(self) -> "ShuffleConfig":
        if self.s < 1:
            raise ConfigError(f"shuffle window s must be >= 1, got {self.s}", section="schedule")
        if self.s > self.frames_per_chunk:
            raise ConfigError(
                f"shuffle window s={self.s} exceeds frames per chunk {self.frames_per_chunk}",
                section="schedule",
            )
        return self


# =============================================================================
# Noise Levels
# =============================================================================

def noise_level(p: ScheduleParams, c: int) -> float:
    """Noise level eps_c for chunk c in [0, n_chunks - 1]."""
    n = p.n_chunks
    if not 0 <= c <= n - 1:
        raise RangeError(f"chunk index {c} out of range [0, {n - 1}]")

    if p.kind == "naive":
        return p.eps_max
    if n == 1:
        return p.eps_min

    x = c / (n - 1)
    if p.kind == "cosine":
        w = 0.5 * (1.0 - math.cos(math.pi * x))
    elif p.kind == "linear":
        w = x
    elif p.kind == "sigmoid":
        w = 1.0 / (1.0 + math.exp(-p.alpha * (x - 0.5)))
    else:
        raise ConfigError(f"unknown schedule kind {p.kind!r}", section="schedule")
    # Convex form: w = 0 and w = 1 land exactly on the endpoints
    return (1.0 - w) * p.eps_min + w * p.eps_max


def schedule_levels(p: ScheduleParams) -> List[float]:
    return [noise_level(p, c) for c in range(p.n_chunks)]


def start_time(p: ScheduleParams, c: int) -> float:
    """Integration start time t_start(c) = eps_c / eps_max, in (0, 1]."""
    return noise_level(p, c) / p.eps_max


# =============================================================================
# Base Noise and Boundary Shuffling
# =============================================================================

def base_noise(rng: RandomSource, chunk: int, frame: int, shape) -> Tensor:
    """Standard-normal frame noise, fixed by (seed, chunk, frame)."""
    return Tensor(rng.stream("noise", chunk, frame).normal(shape))


def chunk_base_noises(rng: RandomSource, chunk: int, frames: int, shape) -> List[Tensor]:
    return [base_noise(rng, chunk, t, shape) for t in range(frames)]


def shuffle_boundary(
    chunk_a_noises: Sequence[Tensor],
    chunk_b_noises: Sequence[Tensor],
    s: int,
    rng: RandomSource,
) -> Tuple[List[Tensor], List[Tensor]]:
    """
    Permute the last s frames of chunk a and the first s frames of chunk b.

    The two permutations are independent draws, chunk a's first.
    """
    if s < 1:
        raise RangeError(f"shuffle window s must be >= 1, got {s}")
    if s > len(chunk_a_noises) or s > len(chunk_b_noises):
        raise RangeError(
            f"shuffle window s={s} exceeds chunk length "
            f"({len(chunk_a_noises)}, {len(chunk_b_noises)})"
        )

    perm_a = rng.permutation(s)
    perm_b = rng.permutation(s)

    split = len(chunk_a_noises) - s
    tail = chunk_a_noises[split:]
    new_a = list(chunk_a_noises[:split]) + [tail[i] for i in perm_a]
    new_b = [chunk_b_noises[i] for i in perm_b] + list(chunk_b_noises[s:])
    return new_a, new_b


def chunk_noise(
    rng: RandomSource,
    chunk: int,
    n_chunks: int,
    shuffle: ShuffleConfig,
    frame_shape,
) -> Tensor:
    """
    Shuffled base noise for one chunk, stacked to frames × prod(frame_shape).

    Boundary b (between chunks b and b+1) draws from its own stream, so a
    chunk's noise depends only on its two boundaries and never on how many
    chunks have been sampled so far.
    """
    if not 0 <= chunk <= n_chunks - 1:
        raise RangeError(f"chunk index {chunk} out of range [0, {n_chunks - 1}]")

    frames_per_chunk = shuffle.frames_per_chunk
    frames = chunk_base_noises(rng, chunk, frames_per_chunk, frame_shape)

    if chunk > 0:
        prev = chunk_base_noises(rng, chunk - 1, frames_per_chunk, frame_shape)
        _, frames = shuffle_boundary(prev, frames, shuffle.s, rng.stream("shuffle", chunk - 1))
    if chunk < n_chunks - 1:
        nxt = chunk_base_noises(rng, chunk + 1, frames_per_chunk, frame_shape)
        frames, _ = shuffle_boundary(frames, nxt, shuffle.s, rng.stream("shuffle", chunk))

    return Tensor(np.stack([np.ravel(f.data) for f in frames]))
