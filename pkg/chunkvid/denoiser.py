"""
Causal block denoiser.

A small transformer predicts the flow-matching velocity of one chunk of
latent frames. Chunk tokens attend to each other bidirectionally and to
prepended context keys/values (from earlier chunks) as attend-only
positions. Time and prompt enter as an added conditioning vector.

Also here: the interpolation path, velocity target, semantic reference,
the block forcing and self forcing losses, and the video discriminator.

Usage:
    cfg = DenoiserConfig()
    params = init_params(cfg, RandomSource(0))
    v = forward(x_t, 0.7, context, prompt, cfg, params)
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from chunkvid import tensor as T
from chunkvid.errors import ConfigError, DimensionError, RangeError
from chunkvid.kv_cache import KVContext
from chunkvid.random_source import RandomSource
from chunkvid.tensor import Tensor

Params = Dict[str, Tensor]


@dataclass
class DenoiserConfig:
    """Network shape and sampler settings."""
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    head_dim: int = 16

    # Latent frames per chunk (T')
    chunk_len: int = 8

    latent_dim: int = 64
    embed_dim: int = 64

    # Weight of the semantic reference in the block forcing target
    gamma: float = 1.0

    sample_steps: int = 8

    def validate(self) -> "DenoiserConfig":
        for name in ("d_model", "n_heads", "n_layers", "head_dim", "chunk_len",
                     "latent_dim", "embed_dim", "sample_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}",
                                  section="denoiser")
        if self.d_model != self.n_heads * self.head_dim:
            raise ConfigError(
                f"d_model ({self.d_model}) must equal n_heads * head_dim "
                f"({self.n_heads} * {self.head_dim})",
                section="denoiser",
            )
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}", section="denoiser")
        return self

    @property
    def d_ff(self) -> int:
        return 2 * self.d_model

    @property
    def cache_heads(self) -> int:
        """Head count of a cached chunk: every layer's heads stacked."""
        return self.n_layers * self.n_heads


@dataclass
class LatentChunk:
    """One chunk of latent frames (T' × latent_dim) and its prompt."""
    latents: Tensor
    prompt_embedding: np.ndarray
    chunk_index: int

    def __post_init__(self):
        if not isinstance(self.latents, Tensor):
            self.latents = Tensor(self.latents)
        if self.latents.ndim != 2 or self.latents.shape[0] < 1:
            raise DimensionError("LatentChunk", self.latents.shape)
        self.prompt_embedding = np.ravel(np.asarray(
            self.prompt_embedding.data if isinstance(self.prompt_embedding, Tensor)
            else self.prompt_embedding,
            dtype=np.float64,
        ))

    @property
    def frames(self) -> int:
        return self.latents.shape[0]


@dataclass
class ChunkKV:
    """Per-token queries/keys/values of a chunk, layers stacked on the head axis."""
    queries: Tensor
    keys: Tensor
    values: Tensor


# =============================================================================
# Parameters
# =============================================================================

def _dense(rng: RandomSource, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal((fan_in, fan_out)) / math.sqrt(fan_in)


def init_params(cfg: DenoiserConfig, rng: RandomSource, zero_output: bool = True) -> Params:
    """
    Random initial parameters.

    With `zero_output` the final projection starts at zero, so the initial
    velocity prediction is the output bias.
    """
    cfg.validate()
    d, L, e = cfg.d_model, cfg.latent_dim, cfg.embed_dim
    raw: Dict[str, np.ndarray] = {
        "in.w": _dense(rng.stream("in"), L, d),
        "in.b": np.zeros(d),
        "pos": 0.02 * rng.stream("pos").normal((cfg.chunk_len, d)),
        "time.w": _dense(rng.stream("time"), d, d),
        "prompt.w": _dense(rng.stream("prompt"), e, d),
    }
    for layer in range(cfg.n_layers):
        lr = rng.stream("layer", layer)
        p = f"layer{layer}."
        raw.update({
            p + "ln1.g": np.ones(d), p + "ln1.b": np.zeros(d),
            p + "attn.q": _dense(lr.stream("q"), d, d),
            p + "attn.k": _dense(lr.stream("k"), d, d),
            p + "attn.v": _dense(lr.stream("v"), d, d),
            p + "attn.o": _dense(lr.stream("o"), d, d),
            p + "ln2.g": np.ones(d), p + "ln2.b": np.zeros(d),
            p + "ff.w1": _dense(lr.stream("w1"), d, cfg.d_ff),
            p + "ff.b1": np.zeros(cfg.d_ff),
            p + "ff.w2": _dense(lr.stream("w2"), cfg.d_ff, d),
            p + "ff.b2": np.zeros(d),
        })
    raw.update({
        "out.ln.g": np.ones(d),
        "out.ln.b": np.zeros(d),
        "out.w": np.zeros((d, L)) if zero_output else _dense(rng.stream("out"), d, L),
        "out.b": np.zeros(L),
    })
    return {name: Tensor(value, requires_grad=True) for name, value in raw.items()}


def param_shapes(cfg: DenoiserConfig) -> Dict[str, tuple]:
    with T.no_grad():
        return {k: v.shape for k, v in init_params(cfg, RandomSource(0)).items()}


def trainable(params: Params) -> Params:
    """Fresh leaf copies that record gradients."""
    return {k: Tensor(v.data, requires_grad=True) for k, v in params.items()}


# =============================================================================
# Flow Matching Path
# =============================================================================

def interpolate(x_start, eps, t: float) -> Tensor:
    """(1 - t)·x_start + t·eps."""
    if not 0.0 <= t <= 1.0:
        raise RangeError(f"t must be in [0, 1], got {t}")
    x_start, eps = T.as_tensor(x_start), T.as_tensor(eps)
    if x_start.shape != eps.shape:
        raise DimensionError("interpolate", x_start.shape, eps.shape)
    return T.add(T.scale(x_start, 1.0 - t), T.scale(eps, t))


def velocity_target(x_start, eps) -> Tensor:
    x_start, eps = T.as_tensor(x_start), T.as_tensor(eps)
    if x_start.shape != eps.shape:
        raise DimensionError("velocity_target", x_start.shape, eps.shape)
    return T.sub(eps, x_start)


def time_features(t: float, width: int) -> np.ndarray:
    """Sinusoidal features of t, shape (1, width)."""
    half = width // 2
    freqs = np.exp(np.linspace(0.0, math.log(100.0), half))
    angles = t * freqs
    feats = np.concatenate([np.sin(angles), np.cos(angles)])
    if feats.shape[0] < width:
        feats = np.concatenate([feats, [t]])
    return feats.reshape(1, width)


# =============================================================================
# Network
# =============================================================================

def _affine_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return T.add(T.mul(T.layer_norm(x), gain), bias)


def _split_heads(x: Tensor, n_heads: int, head_dim: int) -> Tensor:
    """(T', d_model) -> (heads, T', d)."""
    frames = x.shape[0]
    return T.transpose(T.reshape(x, (frames, n_heads, head_dim)), (1, 0, 2))


def _merge_heads(x: Tensor) -> Tensor:
    heads, frames, d = x.shape
    return T.reshape(T.transpose(x, (1, 0, 2)), (frames, heads * d))


def _context_pair(context) -> Tuple[Optional[Tensor], Optional[Tensor]]:
    if context is None:
        return None, None
    if isinstance(context, KVContext):
        return context.keys, context.values
    keys, values = context
    return keys, values


def forward(
    x_t,
    t: float,
    context,
    prompt,
    cfg: DenoiserConfig,
    params: Params,
    return_kv: bool = False,
) -> Union[Tensor, Tuple[Tensor, ChunkKV]]:
    """
    Velocity prediction for one chunk at time t.

    `context` is a KVContext, a (K*, V*) pair or None. K*/V* have
    n_layers·n_heads heads; layer l reads heads [l·n_heads, (l+1)·n_heads).
    """
    x_t = T.as_tensor(x_t)
    if x_t.ndim != 2 or x_t.shape[1] != cfg.latent_dim or x_t.shape[0] > cfg.chunk_len:
        raise DimensionError("forward x_t", x_t.shape, (cfg.chunk_len, cfg.latent_dim))
    prompt_vec = np.ravel(np.asarray(prompt.data if isinstance(prompt, Tensor) else prompt,
                                     dtype=np.float64))
    if prompt_vec.shape[0] != cfg.embed_dim:
        raise DimensionError("forward prompt", prompt_vec.shape, (cfg.embed_dim,))

    ctx_k, ctx_v = _context_pair(context)
    if ctx_k is not None:
        expected = (cfg.cache_heads, cfg.head_dim)
        if (ctx_k.ndim != 3 or (ctx_k.shape[0], ctx_k.shape[2]) != expected
                or ctx_v is None or ctx_v.shape != ctx_k.shape):
            raise DimensionError("forward context", ctx_k.shape, expected)

    frames = x_t.shape[0]
    H, d = cfg.n_heads, cfg.head_dim

    h = T.add(T.matmul(x_t, params["in.w"]), params["in.b"])
    h = T.add(h, T.index_select(params["pos"], np.arange(frames), axis=0))
    cond = T.add(
        T.matmul(Tensor(time_features(t, cfg.d_model)), params["time.w"]),
        T.matmul(Tensor(prompt_vec.reshape(1, -1)), params["prompt.w"]),
    )
    h = T.add(h, cond)

    queries, keys, values = [], [], []
    for layer in range(cfg.n_layers):
        p = f"layer{layer}."
        a = _affine_norm(h, params[p + "ln1.g"], params[p + "ln1.b"])
        q = _split_heads(T.matmul(a, params[p + "attn.q"]), H, d)
        k = _split_heads(T.matmul(a, params[p + "attn.k"]), H, d)
        v = _split_heads(T.matmul(a, params[p + "attn.v"]), H, d)
        queries.append(q)
        keys.append(k)
        values.append(v)

        if ctx_k is not None:
            rows = np.arange(layer * H, (layer + 1) * H)
            k_all = T.concatenate([T.index_select(ctx_k, rows, axis=0), k], axis=1)
            v_all = T.concatenate([T.index_select(ctx_v, rows, axis=0), v], axis=1)
        else:
            k_all, v_all = k, v

        logits = T.scale(T.matmul(q, T.transpose(k_all, (0, 2, 1))), 1.0 / math.sqrt(d))
        attn = T.masked_softmax(logits, np.zeros(logits.shape))
        h = T.add(h, T.matmul(_merge_heads(T.matmul(attn, v_all)), params[p + "attn.o"]))

        f = _affine_norm(h, params[p + "ln2.g"], params[p + "ln2.b"])
        f = T.tanh(T.add(T.matmul(f, params[p + "ff.w1"]), params[p + "ff.b1"]))
        h = T.add(h, T.add(T.matmul(f, params[p + "ff.w2"]), params[p + "ff.b2"]))

    h = _affine_norm(h, params["out.ln.g"], params["out.ln.b"])
    v_pred = T.add(T.matmul(h, params["out.w"]), params["out.b"])

    if not return_kv:
        return v_pred
    return v_pred, ChunkKV(
        queries=T.concatenate(queries, axis=0),
        keys=T.concatenate(keys, axis=0),
        values=T.concatenate(values, axis=0),
    )


def encode_chunk_kv(x0, context, prompt, cfg: DenoiserConfig, params: Params) -> ChunkKV:
    """K/V (and probe queries) of a clean chunk, read at t = 0."""
    _, kv = forward(x0, 0.0, context, prompt, cfg, params, return_kv=True)
    return kv


# =============================================================================
# Semantic Reference
# =============================================================================

def resample_frames(frames: np.ndarray, length: int) -> np.ndarray:
    """Linear interpolation along the frame axis to `length` frames."""
    n = frames.shape[0]
    if n == length:
        return frames.copy()
    if n == 1:
        return np.repeat(frames, length, axis=0)
    pos = np.linspace(0.0, n - 1, length)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    w = (pos - lo)[:, None]
    return frames[lo] * (1.0 - w) + frames[hi] * w


def semantic_reference(
    past: Sequence[Union[LatentChunk, Tensor, np.ndarray]],
    length: int,
    latent_dim: int,
) -> Tensor:
    """Resample each past chunk to `length` frames and average. Empty -> zeros."""
    if not past:
        return Tensor(np.zeros((length, latent_dim)))
    arrays = []
    for chunk in past:
        data = chunk.latents.data if isinstance(chunk, LatentChunk) else T.as_tensor(chunk).data
        if data.ndim != 2 or data.shape[1] != latent_dim:
            raise DimensionError("semantic_reference", data.shape, (length, latent_dim))
        arrays.append(resample_frames(data, length))
    return Tensor(np.mean(np.stack(arrays), axis=0))


# =============================================================================
# Losses
# =============================================================================

def block_forcing_loss(v_pred, eps, x_cond, gamma: float) -> Tensor:
    """mean((v_pred - (eps - gamma·x_cond))²)."""
    v_pred, eps, x_cond = T.as_tensor(v_pred), T.as_tensor(eps), T.as_tensor(x_cond)
    if not v_pred.shape == eps.shape == x_cond.shape:
        raise DimensionError("block_forcing_loss", v_pred.shape, eps.shape)
    target = T.sub(eps, T.scale(x_cond, gamma))
    return T.mean(T.square(T.sub(v_pred, target)))


class Discriminator:
    """
    Video-level real/fake classifier.

    Features are the per-dimension mean and mean square over all frames of
    the latent video; one tanh hidden layer; logistic output clamped to
    [1e-6, 1 - 1e-6].
    """

    CLAMP = 1e-6

    def __init__(self, params: Params):
        self.params = params

    @classmethod
    def init(cls, latent_dim: int, hidden: int, rng: RandomSource) -> "Discriminator":
        raw = {
            "disc.w1": _dense(rng.stream("w1"), 2 * latent_dim, hidden),
            "disc.b1": np.zeros(hidden),
            "disc.w2": _dense(rng.stream("w2"), hidden, 1),
            "disc.b2": np.zeros(1),
        }
        return cls({k: Tensor(v, requires_grad=True) for k, v in raw.items()})

    def __call__(self, video) -> Tensor:
        video = T.as_tensor(video)
        feats = T.concatenate([T.mean(video, axis=0), T.mean(T.square(video), axis=0)], axis=0)
        feats = T.reshape(feats, (1, feats.shape[0]))
        hidden = T.tanh(T.add(T.matmul(feats, self.params["disc.w1"]), self.params["disc.b1"]))
        logit = T.add(T.matmul(hidden, self.params["disc.w2"]), self.params["disc.b2"])
        score = T.clip(T.sigmoid(logit), self.CLAMP, 1.0 - self.CLAMP)
        return T.reshape(score, ())


def _scores(D: Callable, videos: Sequence) -> Tensor:
    return T.concatenate([T.reshape(T.as_tensor(D(v)), (1,)) for v in videos], axis=0)


def self_forcing_loss(D: Callable, real_videos: Sequence, fake_videos: Sequence) -> Tuple[Tensor, Tensor]:
    """
    Adversarial losses over whole videos.

    loss_D = -mean(log D(real)) - mean(log(1 - D(fake)))
    loss_G = mean(log(1 - D(fake)))
    """
    if not real_videos or not fake_videos:
        raise RangeError("self_forcing_loss needs at least one real and one fake video")
    real = _scores(D, real_videos)
    fake = _scores(D, fake_videos)
    log_not_fake = T.mean(T.log(T.sub(1.0, fake)))
    loss_d = T.sub(T.scale(T.mean(T.log(real)), -1.0), log_not_fake)
    return loss_d, log_not_fake


def video_latents(chunks: Sequence[Union[LatentChunk, Tensor]]) -> Tensor:
    """Concatenate chunks along the frame axis."""
    parts: List[Tensor] = [c.latents if isinstance(c, LatentChunk) else T.as_tensor(c)
                           for c in chunks]
    return T.concatenate(parts, axis=0)
