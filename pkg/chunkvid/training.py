"""
Training loop for the block denoiser.

Each step combines two objectives:

- Block forcing: every chunk of a ground-truth video is noised to a time
  drawn from (0, t_start(c)] and denoised with context built from the
  ground-truth chunks before it. The velocity target is pulled toward the
  semantic reference of the retrieved chunks.
- Self forcing: the model rolls out a short video from its own samples; a
  discriminator scores whole videos and the generator is pushed to fool it.

Usage:
    setup = TrainingSetup(DenoiserConfig(), TrainConfig(steps=300), ScheduleParams(), CacheConfig())
    run = train(setup, videos)
    run.history[-1].loss_bf
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from chunkvid import tensor as T
from chunkvid.console import console
from chunkvid.denoiser import (
    DenoiserConfig,
    Discriminator,
    LatentChunk,
    Params,
    block_forcing_loss,
    encode_chunk_kv,
    forward,
    init_params,
    interpolate,
    self_forcing_loss,
    semantic_reference,
    trainable,
    video_latents,
)
from chunkvid.errors import ConfigError, NumericError, RangeError
from chunkvid.kv_cache import CacheConfig, KVBank, assemble_context, bank_insert, build_sparse_kv
from chunkvid.noise_schedule import ScheduleParams, start_time
from chunkvid.random_source import RandomSource
from chunkvid.sampler import generate_video
from chunkvid.tensor import Tensor


@dataclass
class TrainConfig:
    """Optimisation settings."""
    steps: int = 300
    lr: float = 0.5
    disc_lr: float = 0.05

    # Global gradient-norm clip; None disables
    grad_clip: Optional[float] = 5.0

    sf_weight: float = 1.0
    sf_rollout_chunks: int = 2
    sf_sample_steps: int = 2
    disc_hidden: int = 32
    batch_size: int = 2
    seed: int = 0
    log_every: int = 25

    def validate(self) -> "TrainConfig":
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}", section="train")
        if self.lr < 0 or self.disc_lr < 0:
            raise ConfigError("learning rates must be >= 0", section="train")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be > 0 when set", section="train")
        if self.sf_weight < 0:
            raise ConfigError("sf_weight must be >= 0", section="train")
        for name in ("sf_rollout_chunks", "sf_sample_steps", "disc_hidden", "batch_size",
                     "log_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", section="train")
        return self


@dataclass
class TrainingSetup:
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    schedule: ScheduleParams = field(default_factory=ScheduleParams)
    cache: CacheConfig = field(default_factory=CacheConfig)

    def validate(self) -> "TrainingSetup":
        self.denoiser.validate()
        self.train.validate()
        self.schedule.validate()
        self.cache.validate()
        return self


@dataclass
class TrainingVideo:
    """Ground-truth chunk sequence of one training video."""
    chunks: List[LatentChunk]

    def __len__(self) -> int:
        return len(self.chunks)


@dataclass
class OptimizerState:
    step: int
    disc_params: Params

    @classmethod
    def init(cls, setup: TrainingSetup, rng: RandomSource) -> "OptimizerState":
        disc = Discriminator.init(setup.denoiser.latent_dim, setup.train.disc_hidden,
                                  rng.stream("disc"))
        return cls(step=0, disc_params=disc.params)


@dataclass
class LossReport:
    step: int
    loss_bf: float
    loss_g: float = 0.0
    loss_d: float = 0.0
    grad_norm: float = 0.0

    @property
    def total(self) -> float:
        return self.loss_bf + self.loss_g


class SGD:
    """Plain gradient descent with optional global-norm clipping."""

    def __init__(self, lr: float, clip: Optional[float] = None):
        self.lr = lr
        self.clip = clip

    @staticmethod
    def global_norm(grads: Dict[str, np.ndarray]) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))

    def apply(self, params: Params, grads: Dict[str, np.ndarray]) -> Params:
        norm = self.global_norm(grads)
        factor = self.lr
        if self.clip is not None and norm > self.clip:
            factor *= self.clip / norm
        return {
            name: Tensor(p.data - factor * grads[name]) if name in grads else Tensor(p.data)
            for name, p in params.items()
        }


def _collect_grads(params: Params, what: str) -> Dict[str, np.ndarray]:
    grads = {}
    for name, p in params.items():
        g = np.zeros(p.shape) if p.grad is None else p.grad
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite {what} gradient for {name}")
        grads[name] = g
    return grads


# =============================================================================
# Block Forcing
# =============================================================================

def block_forcing_video_loss(
    video: TrainingVideo,
    params: Params,
    setup: TrainingSetup,
    rng: RandomSource,
) -> Tensor:
    """Mean block forcing loss over the chunks of one ground-truth video."""
    cfg = setup.denoiser
    n = len(video)
    if n < 1:
        raise RangeError("training video has no chunks")
    schedule = setup.schedule
    if schedule.n_chunks != n:
        schedule = dataclasses.replace(schedule, n_chunks=n)

    bank = KVBank(capacity=setup.cache.capacity)
    total: Optional[Tensor] = None
    for c, chunk in enumerate(video.chunks):
        prompt = chunk.prompt_embedding
        context = assemble_context(bank, c, setup.cache, prompt)
        x_cond = semantic_reference([video.chunks[i] for i in context.semantic],
                                    chunk.frames, cfg.latent_dim)

        # t in (0, t_start(c)]
        t = start_time(schedule, c) * (1.0 - float(rng.stream("t", c).uniform()))
        eps = Tensor(rng.stream("eps", c).normal(chunk.latents.shape))
        x_t = interpolate(chunk.latents, eps, t)

        v_pred = forward(x_t, t, context, prompt, cfg, params)
        loss = block_forcing_loss(v_pred, eps, x_cond, cfg.gamma)
        total = loss if total is None else T.add(total, loss)

        kv = encode_chunk_kv(chunk.latents, context, prompt, cfg, params)
        sparse = build_sparse_kv(kv.keys, kv.values, kv.queries, setup.cache,
                                 rng.stream("probe", c))
        bank_insert(bank, c, sparse, prompt)

    return T.scale(total, 1.0 / n)


def evaluate_block_forcing(
    params: Params,
    batch: Sequence[TrainingVideo],
    setup: TrainingSetup,
    seed: int = 1234,
) -> float:
    """Block forcing loss on a fixed batch with fixed noise."""
    rng = RandomSource(seed).stream("eval")
    with T.no_grad():
        losses = [block_forcing_video_loss(v, params, setup, rng.stream(i)).item()
                  for i, v in enumerate(batch)]
    return float(np.mean(losses))


# =============================================================================
# Training Step
# =============================================================================

def _self_rollouts(batch, params, setup, rng):
    cfg = setup.train
    reals, fakes = [], []
    for i, video in enumerate(batch):
        n = min(cfg.sf_rollout_chunks, len(video))
        prompts = [c.prompt_embedding for c in video.chunks[:n]]
        result = generate_video(
            prompts, n, setup.denoiser, setup.schedule, setup.cache, params,
            rng.stream("rollout", i), track=True, steps=cfg.sf_sample_steps,
        )
        fakes.append(result.latents)
        reals.append(video_latents(video.chunks[:n]))
    return reals, fakes


def train_step(
    batch: Sequence[TrainingVideo],
    params: Params,
    state: OptimizerState,
    setup: TrainingSetup,
    rng: RandomSource,
):
    """
    One update of generator and discriminator.

    Returns (new params, new optimizer state, LossReport). On a non-finite
    loss or gradient a NumericError is raised and nothing is updated.
    """
    if not batch:
        raise RangeError("train_step needs at least one video")
    cfg = setup.train
    step_rng = rng.stream("step", state.step)

    gen = trainable(params)
    losses = [block_forcing_video_loss(v, gen, setup, step_rng.stream("bf", i))
              for i, v in enumerate(batch)]
    loss_bf = losses[0]
    for extra in losses[1:]:
        loss_bf = T.add(loss_bf, extra)
    loss_bf = T.scale(loss_bf, 1.0 / len(losses))

    total = loss_bf
    loss_g_value = loss_d_value = 0.0
    disc_params = state.disc_params
    reals: List[Tensor] = []
    fakes: List[Tensor] = []

    if cfg.sf_weight > 0:
        reals, fakes = _self_rollouts(batch, gen, setup, step_rng)
        _, loss_g = self_forcing_loss(Discriminator(trainable(state.disc_params)), reals, fakes)
        total = T.add(total, T.scale(loss_g, cfg.sf_weight))
        loss_g_value = loss_g.item()

    T.backward(total)
    gen_grads = _collect_grads(gen, "generator")

    if cfg.sf_weight > 0:
        disc = Discriminator(trainable(state.disc_params))
        loss_d, _ = self_forcing_loss(disc, reals, [f.detach() for f in fakes])
        T.backward(loss_d)
        disc_grads = _collect_grads(disc.params, "discriminator")
        disc_params = SGD(cfg.disc_lr, cfg.grad_clip).apply(state.disc_params, disc_grads)
        loss_d_value = loss_d.item()

    new_params = SGD(cfg.lr, cfg.grad_clip).apply(params, gen_grads)
    report = LossReport(
        step=state.step,
        loss_bf=loss_bf.item(),
        loss_g=loss_g_value,
        loss_d=loss_d_value,
        grad_norm=SGD.global_norm(gen_grads),
    )
    return new_params, OptimizerState(step=state.step + 1, disc_params=disc_params), report


# =============================================================================
# Training Run
# =============================================================================

@dataclass
class TrainingRun:
    params: Params
    state: OptimizerState
    history: List[LossReport]
    initial_eval: float
    final_eval: float

    @property
    def improvement(self) -> float:
        """final / initial evaluation loss."""
        if self.initial_eval == 0:
            return 1.0
        return self.final_eval / self.initial_eval


def batches(videos: Sequence[TrainingVideo], step: int, batch_size: int) -> List[TrainingVideo]:
    """Videos for `step`, cycling through the corpus in order."""
    n = len(videos)
    return [videos[(step * batch_size + j) % n] for j in range(min(batch_size, n))]


def train(
    setup: TrainingSetup,
    videos: Sequence[TrainingVideo],
    params: Optional[Params] = None,
    eval_batch: Optional[Sequence[TrainingVideo]] = None,
    on_step: Optional[Callable[[LossReport], None]] = None,
) -> TrainingRun:
    setup.validate()
    if not videos:
        raise RangeError("training corpus is empty")
    cfg = setup.train
    rng = RandomSource(cfg.seed)
    if params is None:
        params = init_params(setup.denoiser, rng.stream("init"))
    state = OptimizerState.init(setup, rng)
    eval_batch = list(eval_batch or videos[:cfg.batch_size])

    initial = evaluate_block_forcing(params, eval_batch, setup)
    console.info(f"Initial block forcing loss {initial:.4f}")

    tracker = console.tracker
    tracker.reset()
    tracker.plan(cfg.steps)
    history: List[LossReport] = []

    with console.spinning(f"Training {cfg.steps} steps..."):
        for step in range(cfg.steps):
            params, state, report = train_step(
                batches(videos, step, cfg.batch_size), params, state, setup, rng
            )
            history.append(report)
            done, planned = tracker.advance()
            if on_step is not None:
                on_step(report)
            if done % cfg.log_every == 0 or done == planned:
                console.step(
                    f"{console.progress_bar(done, planned)} step {done}: "
                    f"L_BF {report.loss_bf:.4f}  L_G {report.loss_g:.4f}  L_D {report.loss_d:.4f}"
                )

    final = evaluate_block_forcing(params, eval_batch, setup)
    console.success(f"Trained {cfg.steps} steps: L_BF {initial:.4f} -> {final:.4f}")
    return TrainingRun(params=params, state=state, history=history,
                       initial_eval=initial, final_eval=final)
