"""
Synthetic video corpus.

Scenes are a colored square on a bluish background, 32×32 RGB, with one
chunk of `frames_per_chunk` frames per prompt. Drift kinds degrade the
scene monotonically from chunk to chunk so the drift metrics have
something to measure:

    moving_square      square bounces at 1 px/frame
    static             square never moves; all frames identical
    brightness_drift   static scene, every channel raised by `drift` per chunk,
                       clipped at 1.0 (the square saturates first)
    blur_drift         static scene, Gaussian blur sigma grows by `drift` per chunk

Latents stand in for a video autoencoder: the luminance is averaged over
4×4 blocks (8×8 = 64 values per frame) and mapped to 4·Y - 3.

Usage:
    videos = synth_corpus(CorpusSpec(scene_kind="moving_square"), RandomSource(0))
    videos[0].frames, videos[0].latents[0], videos[0].prompts[0]
"""

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from chunkvid.denoiser import LatentChunk
from chunkvid.embedding import Embedder
from chunkvid.errors import ConfigError, DimensionError, RangeError
from chunkvid.random_source import RandomSource
from chunkvid.scorers import FrameSequence, luminance
from chunkvid.tensor import Tensor
from chunkvid.training import TrainingVideo

SCENE_KINDS = ("moving_square", "brightness_drift", "blur_drift", "static")

BACKGROUND = (0.1, 0.2, 0.5)
SQUARE = (0.8, 0.2, 0.2)

LATENT_POOL = 4


@dataclass
class CorpusSpec:
    scene_kind: str = "moving_square"
    n_videos: int = 4
    n_chunks: int = 4

    # Brightness offset per chunk, or blur sigma per chunk (pixels)
    drift: float = 0.0

    frames_per_chunk: int = 8
    frame_size: int = 32
    square_size: int = 8

    def validate(self) -> "CorpusSpec":
        if self.scene_kind not in SCENE_KINDS:
            raise ConfigError(
                f"scene_kind must be one of {', '.join(SCENE_KINDS)}, got {self.scene_kind!r}",
                section="corpus",
            )
        for name in ("n_videos", "n_chunks", "frames_per_chunk", "square_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", section="corpus")
        if self.drift < 0:
            raise ConfigError(f"drift must be >= 0, got {self.drift}", section="corpus")
        if self.frame_size % LATENT_POOL or self.frame_size < 2 * self.square_size:
            raise ConfigError(
                f"frame_size must be a multiple of {LATENT_POOL} and at least twice the square",
                section="corpus",
            )
        if self.scene_kind == "brightness_drift":
            floor = min(BACKGROUND + SQUARE) + self.drift * (self.n_chunks - 1)
            if floor >= 1.0:
                raise ConfigError(
                    f"brightness drift {self.drift} washes the frame out within {self.n_chunks} chunks",
                    section="corpus",
                )
        return self

    @property
    def latent_dim(self) -> int:
        return (self.frame_size // LATENT_POOL) ** 2

    @property
    def n_frames(self) -> int:
        return self.n_chunks * self.frames_per_chunk


@dataclass
class SyntheticVideo:
    """Pixel frames, per-chunk latents (frames × latent_dim) and prompts."""
    frames: FrameSequence
    latents: List[np.ndarray] = field(default_factory=list)
    prompts: List[str] = field(default_factory=list)

    def training_video(self, embedder: Embedder) -> TrainingVideo:
        return TrainingVideo(chunks=[
            LatentChunk(latents=Tensor(z), prompt_embedding=embedder(p), chunk_index=c)
            for c, (z, p) in enumerate(zip(self.latents, self.prompts))
        ])


# =============================================================================
# Scenes
# =============================================================================

def _bounce(start: int, velocity: int, t: int, span: int) -> int:
    """Position after t steps, reflecting inside [0, span]."""
    if span == 0:
        return 0
    m = (start + velocity * t) % (2 * span)
    return m if m <= span else 2 * span - m


def _render(spec: CorpusSpec, y: int, x: int) -> np.ndarray:
    size = spec.frame_size
    frame = np.empty((size, size, 3))
    frame[:] = BACKGROUND
    frame[y:y + spec.square_size, x:x + spec.square_size] = SQUARE
    return frame


def _phase(c: int, n: int) -> str:
    if c == 0:
        return "opening"
    if c == n - 1:
        return "closing"
    return "middle"


def chunk_prompt(spec: CorpusSpec, c: int) -> str:
    return f"chunk {c}: {spec.scene_kind.replace('_', ' ')} {_phase(c, spec.n_chunks)}"


def render_video(spec: CorpusSpec, rng: RandomSource) -> np.ndarray:
    """Pixel frames n_frames × H × W × 3 for one video."""
    span = spec.frame_size - spec.square_size
    y0, x0 = (int(v) for v in rng.stream("start").uniform(0, span + 1, size=2))
    vy, vx = (int(v) for v in 2 * (rng.stream("velocity").uniform(size=2) < 0.5) - 1)

    frames = []
    for t in range(spec.n_frames):
        chunk = t // spec.frames_per_chunk
        if spec.scene_kind == "moving_square":
            frame = _render(spec, _bounce(y0, vy, t, span), _bounce(x0, vx, t, span))
        else:
            frame = _render(spec, y0, x0)

        if spec.scene_kind == "brightness_drift":
            frame = frame + spec.drift * chunk
        elif spec.scene_kind == "blur_drift" and spec.drift * chunk > 0:
            sigma = spec.drift * chunk
            frame = ndimage.gaussian_filter(frame, sigma=(sigma, sigma, 0), mode="nearest")
        frames.append(frame)
    return np.clip(np.stack(frames), 0.0, 1.0)


# =============================================================================
# Latent Bridge
# =============================================================================

def encode_frames(frames: np.ndarray) -> np.ndarray:
    """T × H × W × C frames -> T × (H/4 · W/4) latents, 4·Y - 3 of pooled luminance."""
    t, h, w, _ = frames.shape
    y = np.stack([luminance(f) for f in frames])
    pooled = y.reshape(t, h // LATENT_POOL, LATENT_POOL, w // LATENT_POOL, LATENT_POOL).mean(axis=(2, 4))
    return 4.0 * pooled.reshape(t, -1) - 3.0


def decode_latents(chunks: Sequence, frame_rate: float = 8.0) -> FrameSequence:
    """Inverse of encode_frames for square latents: grayscale frames, 4× nearest upsampling."""
    arrays = [c.latents.data if isinstance(c, LatentChunk) else np.asarray(
        c.data if isinstance(c, Tensor) else c) for c in chunks]
    if not arrays:
        raise DimensionError("decode_latents (no chunks)", ())
    z = np.concatenate(arrays, axis=0)
    side = int(round(np.sqrt(z.shape[1])))
    if side * side != z.shape[1]:
        raise DimensionError("decode_latents (latent_dim must be a square)", z.shape)
    y = np.clip((z + 3.0) / 4.0, 0.0, 1.0).reshape(-1, side, side)
    up = np.repeat(np.repeat(y, LATENT_POOL, axis=1), LATENT_POOL, axis=2)
    return FrameSequence(up[..., None], frame_rate)


def vae_latent_shape(frames: int, height: int, width: int) -> Tuple[int, int, int, int]:
    """Latent shape (1 + T/4, H/8, W/8, 16) of a 4×8×8-compressing video autoencoder."""
    if frames < 1 or height % 8 or width % 8:
        raise RangeError(f"need T >= 1 and H, W divisible by 8, got ({frames}, {height}, {width})")
    return 1 + frames // 4, height // 8, width // 8, 16


def synth_corpus(spec: CorpusSpec, rng: RandomSource) -> List[SyntheticVideo]:
    spec.validate()
    videos = []
    for v in range(spec.n_videos):
        frames = render_video(spec, rng.stream("video", v))
        latents = encode_frames(frames)
        per_chunk = [
            latents[c * spec.frames_per_chunk:(c + 1) * spec.frames_per_chunk]
            for c in range(spec.n_chunks)
        ]
        videos.append(SyntheticVideo(
            frames=FrameSequence(frames),
            latents=per_chunk,
            prompts=[chunk_prompt(spec, c) for c in range(spec.n_chunks)],
        ))
    return videos
