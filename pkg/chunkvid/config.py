"""
Run configuration.

A run is configured by a YAML file with one section per module; keys
inside a section map onto that module's config dataclass. Unknown
sections and keys are rejected. Missing keys keep their defaults.

    denoiser: {d_model: 64, n_heads: 4, gamma: 1.0}
    train:    {steps: 300, lr: 0.5}
    schedule: {kind: cosine, n_chunks: 8, shuffle_s: 4}
    cache:    {tau: 0.98, top_l: 2, seq_ctx_len: 2}
    vde:      {n_segments: 4, weight_kind: linear}
    corpus:   {scene_kind: moving_square, n_videos: 4}
    run:      {seed: 0, out_dir: runs}

Usage:
    cfg = load_config("run.yaml")
    cfg = apply_overrides(cfg, seed=7, schedule="linear")
"""

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from chunkvid.corpus import CorpusSpec
from chunkvid.denoiser import DenoiserConfig
from chunkvid.errors import ConfigError
from chunkvid.kv_cache import CacheConfig
from chunkvid.noise_schedule import ScheduleParams, ShuffleConfig
from chunkvid.training import TrainConfig, TrainingSetup
from chunkvid.vde import VDEConfig


@dataclass
class ScheduleSection(ScheduleParams):
    """Schedule parameters plus the boundary shuffle window."""
    shuffle_s: int = 4

    @property
    def params(self) -> ScheduleParams:
        return ScheduleParams(
            kind=self.kind, eps_min=self.eps_min, eps_max=self.eps_max,
            n_chunks=self.n_chunks, alpha=self.alpha,
        )


@dataclass
class RunSection:
    seed: int = 0
    out_dir: Path = field(default_factory=lambda: Path("runs"))

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)


@dataclass
class RunConfig:
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    cache: CacheConfig = field(default_factory=CacheConfig)
    vde: VDEConfig = field(default_factory=VDEConfig)
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> "RunConfig":
        self.denoiser.validate()
        self.train.validate()
        self.schedule.params.validate()
        self.shuffle.validate()
        self.cache.validate()
        self.vde.validate()
        self.corpus.validate()
        if self.corpus.latent_dim != self.denoiser.latent_dim:
            raise ConfigError(
                f"corpus latent size {self.corpus.latent_dim} (frame_size {self.corpus.frame_size}) "
                f"does not match denoiser latent_dim {self.denoiser.latent_dim}",
                section="denoiser",
            )
        if self.corpus.frames_per_chunk != self.denoiser.chunk_len:
            raise ConfigError(
                f"corpus frames_per_chunk {self.corpus.frames_per_chunk} does not match "
                f"denoiser chunk_len {self.denoiser.chunk_len}",
                section="denoiser",
            )
        return self

    @property
    def shuffle(self) -> ShuffleConfig:
        return ShuffleConfig(s=self.schedule.shuffle_s, frames_per_chunk=self.denoiser.chunk_len)

    def training_setup(self) -> TrainingSetup:
        train = dataclasses.replace(self.train, seed=self.run.seed)
        return TrainingSetup(
            denoiser=self.denoiser, train=train,
            schedule=self.schedule.params, cache=self.cache,
        )

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        out = {}
        for f in fields(self):
            section = dataclasses.asdict(getattr(self, f.name))
            out[f.name] = {k: (str(v) if isinstance(v, Path) else v) for k, v in section.items()}
        return out


SECTIONS = {f.name: f for f in fields(RunConfig)}


def _section_type(name: str):
    return {
        "denoiser": DenoiserConfig,
        "train": TrainConfig,
        "schedule": ScheduleSection,
        "cache": CacheConfig,
        "vde": VDEConfig,
        "corpus": CorpusSpec,
        "run": RunSection,
    }[name]


def config_from_dict(data: Optional[Dict[str, Any]]) -> RunConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must be a mapping of sections")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown sections {unknown}; expected {sorted(SECTIONS)}")

    built = {}
    for name in SECTIONS:
        values = data.get(name) or {}
        if not isinstance(values, dict):
            raise ConfigError("section must be a mapping of keys", section=name)
        cls = _section_type(name)
        known = {f.name for f in fields(cls)}
        extra = sorted(set(values) - known)
        if extra:
            raise ConfigError(f"unknown keys {extra}", section=name)
        try:
            built[name] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), section=name) from exc
    return RunConfig(**built).validate()


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """Read a YAML run config; None gives the defaults."""
    if path is None:
        return RunConfig().validate()
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    return config_from_dict(data)


def save_config(cfg: RunConfig, path: Union[str, Path]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)


# CLI flag -> (section, key)
OVERRIDES = {
    "seed": ("run", "seed"),
    "out": ("run", "out_dir"),
    "schedule": ("schedule", "kind"),
    "eps_min": ("schedule", "eps_min"),
    "eps_max": ("schedule", "eps_max"),
    "alpha": ("schedule", "alpha"),
    "shuffle_s": ("schedule", "shuffle_s"),
    "n_chunks": ("schedule", "n_chunks"),
    "tau": ("cache", "tau"),
    "top_l": ("cache", "top_l"),
    "cache_mode": ("cache", "mode"),
    "steps": ("train", "steps"),
    "segments": ("vde", "n_segments"),
    "weights": ("vde", "weight_kind"),
    "flow_tau": ("vde", "flow_tau"),
    "motion_kind": ("vde", "motion_kind"),
}


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Return a copy with every non-None override applied, re-validated."""
    data = cfg.to_dict()
    for flag, value in overrides.items():
        if value is None:
            continue
        if flag not in OVERRIDES:
            raise ConfigError(f"unknown override {flag!r}")
        section, key = OVERRIDES[flag]
        data[section][key] = str(value) if isinstance(value, Path) else value
    return config_from_dict(data)
