"""
End-to-end commands.

Each command takes a validated RunConfig, does its work, writes its files
under the run's output directory and returns what it wrote. Terminal
output goes through the shared console.

    cmd_synth     synthetic videos as .lvt files
    cmd_train     checkpoint + per-step loss curve
    cmd_generate  decoded video (.lvt), raw latents, bank snapshot, provenance
    cmd_evaluate  drift report as JSON + CSV
    cmd_ablate    schedule × cache grid, one CSV row per cell
"""

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from chunkvid.checkpoint import load_checkpoint, save_checkpoint
from chunkvid.config import RunConfig, save_config
from chunkvid.console import console
from chunkvid.corpus import chunk_prompt, decode_latents, synth_corpus
from chunkvid.denoiser import Params, init_params
from chunkvid.embedding import HashingEmbedder, mean_embed
from chunkvid.errors import ConfigError, NumericError
from chunkvid.kv_cache import CACHE_MODES, CacheConfig, save_bank
from chunkvid.noise_schedule import SCHEDULE_KINDS
from chunkvid.provenance import ProvenanceLog
from chunkvid.random_source import RandomSource
from chunkvid.sampler import GenerationResult, generate_video
from chunkvid.scorers import METRICS, ScorerPlugins
from chunkvid.training import LossReport, TrainingRun, train
from chunkvid.vde import VDEConfig, VDEReport, evaluate
from chunkvid.video_io import read_video, write_lvt

LOSS_COLUMNS = ["step", "loss_bf", "loss_g", "loss_d"]


def _embedder(cfg: RunConfig) -> HashingEmbedder:
    return HashingEmbedder(cfg.denoiser.embed_dim)


def _generation_prompts(cfg: RunConfig, n: int) -> List[np.ndarray]:
    spec = dataclasses.replace(cfg.corpus, n_chunks=n)
    embed = _embedder(cfg)
    return [mean_embed(chunk_prompt(spec, c), embed) for c in range(n)]


# =============================================================================
# synth
# =============================================================================

def cmd_synth(cfg: RunConfig) -> List[Path]:
    out_dir = cfg.run.out_dir / "synth"
    videos = synth_corpus(cfg.corpus, RandomSource(cfg.run.seed).stream("corpus"))
    paths = []
    for i, video in enumerate(videos):
        path = out_dir / f"{cfg.corpus.scene_kind}_{i:03d}.lvt"
        write_lvt(video.frames, path)
        (out_dir / f"{cfg.corpus.scene_kind}_{i:03d}.prompts.txt").write_text(
            "\n".join(video.prompts) + "\n"
        )
        paths.append(path)
    console.success(f"Wrote {len(paths)} {cfg.corpus.scene_kind} videos to {out_dir}")
    return paths


# =============================================================================
# train
# =============================================================================

@dataclass
class TrainOutputs:
    checkpoint: Path
    loss_csv: Path
    run: TrainingRun


class LossCurveWriter:
    """Appends one CSV row per training step, flushed as it goes."""

    def __init__(self, path: Path):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(path, "w", newline="")
        self._writer = csv.writer(self._file)
        self._writer.writerow(LOSS_COLUMNS)
        self.rows = 0

    def __call__(self, report: LossReport) -> None:
        self._writer.writerow([report.step, repr(report.loss_bf), repr(report.loss_g),
                               repr(report.loss_d)])
        self._file.flush()
        self.rows += 1

    def close(self) -> None:
        self._file.close()


def cmd_train(cfg: RunConfig) -> TrainOutputs:
    out_dir = cfg.run.out_dir
    setup = cfg.training_setup()
    corpus = synth_corpus(cfg.corpus, RandomSource(cfg.run.seed).stream("corpus"))
    embed = _embedder(cfg)
    videos = [v.training_video(embed) for v in corpus]
    console.info(f"Training on {len(videos)} {cfg.corpus.scene_kind} videos "
                 f"of {cfg.corpus.n_chunks} chunks")

    curve = LossCurveWriter(out_dir / "loss.csv")
    try:
        run = train(setup, videos, on_step=curve)
    except NumericError:
        console.error(f"Training aborted after {curve.rows} steps; partial curve in {curve.path}")
        raise
    finally:
        curve.close()

    checkpoint = out_dir / "model.lvck"
    save_checkpoint(checkpoint, cfg.denoiser, run.params)
    save_config(cfg, out_dir / "config.yaml")
    console.summary_panel("Training", {
        "Steps": str(len(run.history)),
        "Initial L_BF": f"{run.initial_eval:.4f}",
        "Final L_BF": f"{run.final_eval:.4f}",
        "Ratio": f"{run.improvement:.3f}",
        "Checkpoint": str(checkpoint),
    })
    return TrainOutputs(checkpoint=checkpoint, loss_csv=curve.path, run=run)


# =============================================================================
# generate
# =============================================================================

@dataclass
class GenerateOutputs:
    video: Path
    latents: Path
    bank: Path
    provenance: Path
    result: GenerationResult


def load_params(cfg: RunConfig, checkpoint: Optional[Union[str, Path]]) -> Params:
    """Checkpoint parameters, or a fresh initialisation when none is given."""
    if checkpoint is None:
        return init_params(cfg.denoiser, RandomSource(cfg.run.seed).stream("init"))
    ckpt_cfg, params = load_checkpoint(checkpoint)
    if dataclasses.asdict(ckpt_cfg) != dataclasses.asdict(cfg.denoiser):
        raise ConfigError(
            f"checkpoint {checkpoint} was trained with a different denoiser config",
            section="denoiser",
        )
    return params


def run_generation(cfg: RunConfig, params: Params, cache: Optional[CacheConfig] = None,
                   schedule_kind: Optional[str] = None) -> GenerationResult:
    n = cfg.schedule.n_chunks
    schedule = cfg.schedule.params
    if schedule_kind is not None:
        schedule = dataclasses.replace(schedule, kind=schedule_kind)
    return generate_video(
        _generation_prompts(cfg, n), n, cfg.denoiser, schedule, cache or cfg.cache,
        params, RandomSource(cfg.run.seed).stream("generate"), shuffle=cfg.shuffle,
    )


def cmd_generate(cfg: RunConfig, checkpoint: Optional[Union[str, Path]] = None) -> GenerateOutputs:
    out_dir = cfg.run.out_dir
    params = load_params(cfg, checkpoint)

    with console.spinning(f"Generating {cfg.schedule.n_chunks} chunks..."):
        result = run_generation(cfg, params)

    outputs = GenerateOutputs(
        video=out_dir / "video.lvt",
        latents=out_dir / "latents.npy",
        bank=out_dir / "bank.lvkv",
        provenance=out_dir / "provenance.json",
        result=result,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    write_lvt(decode_latents(result.chunks), outputs.video)
    np.save(outputs.latents, result.latents.data)
    save_bank(result.bank, outputs.bank)
    result.provenance.save(outputs.provenance)

    for problem in result.provenance.audit():
        console.warn(problem)
    result.provenance.show()
    console.success(f"Wrote {outputs.video}")
    return outputs


# =============================================================================
# evaluate
# =============================================================================

@dataclass
class EvaluateOutputs:
    json: Path
    csv: Path
    report: VDEReport


def show_report(report: VDEReport) -> None:
    rows = []
    for metric in METRICS:
        if metric in report.metrics:
            series = report.metrics[metric]
            rows.append([metric, f"{series.vde:.6g}", " ".join(f"{q:.4g}" for q in series.q)])
        else:
            rows.append([metric, "-", report.failures.get(metric, "")])
    console.table(
        f"Drift ({report.n_segments} segments, {report.weight_kind} weights)",
        [("metric", "bold"), ("VDE", "cyan"), ("Q", "dim")],
        rows,
    )


def cmd_evaluate(
    input_path: Union[str, Path],
    vde_cfg: VDEConfig,
    out_dir: Union[str, Path],
    plugins: Optional[ScorerPlugins] = None,
) -> EvaluateOutputs:
    video = read_video(input_path)
    report = evaluate(video, vde_cfg, plugins)
    out_dir = Path(out_dir)
    outputs = EvaluateOutputs(json=out_dir / "vde.json", csv=out_dir / "vde.csv", report=report)
    report.write_json(outputs.json)
    report.write_csv(outputs.csv)

    show_report(report)
    for metric, reason in report.failures.items():
        console.warn(f"Metric {metric} unavailable: {reason}")
    console.success(f"Wrote {outputs.json} and {outputs.csv}")
    return outputs


# =============================================================================
# ablate
# =============================================================================

def ablation_caches(cfg: RunConfig, cache_modes: Optional[Sequence[str]] = None) -> Dict[str, CacheConfig]:
    """Cache cells by label: rolling (l=0) and semantic (l=2), plus any extra modes."""
    cells = {
        "rolling": dataclasses.replace(cfg.cache, mode="rolling", top_l=0),
        "semantic": dataclasses.replace(cfg.cache, mode="semantic", top_l=2),
    }
    for mode in cache_modes or ():
        if mode not in CACHE_MODES:
            raise ConfigError(f"unknown cache mode {mode!r}", section="cache")
        if mode not in cells:
            cells[mode] = dataclasses.replace(cfg.cache, mode=mode)
    return cells


def provenance_signature(log: ProvenanceLog) -> str:
    """'chunk:recent+retrieved' per chunk, e.g. '0:+;1:0+;3:1,2+0'."""
    return ";".join(
        f"{c.chunk_index}:{','.join(map(str, c.seq_ctx))}+{','.join(map(str, c.semantic))}"
        for c in log.chunks
    )


ABLATION_COLUMNS = [
    "schedule", "cache", "top_l", "tau", "shuffle_s", "n_chunks",
    "mean_retention", "peak_bank", *[f"vde_{m}" for m in METRICS], "provenance",
]


def cmd_ablate(
    cfg: RunConfig,
    checkpoint: Optional[Union[str, Path]] = None,
    schedules: Sequence[str] = SCHEDULE_KINDS,
    cache_modes: Optional[Sequence[str]] = None,
) -> Path:
    """Run the schedule × cache grid and write ablation.csv."""
    n = max(cfg.schedule.n_chunks, 4)
    cfg = dataclasses.replace(cfg, schedule=dataclasses.replace(cfg.schedule, n_chunks=n))
    params = load_params(cfg, checkpoint)
    caches = ablation_caches(cfg, cache_modes)

    out_path = cfg.run.out_dir / "ablation.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tracker = console.tracker
    tracker.reset()
    tracker.plan(len(schedules) * len(caches))

    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(ABLATION_COLUMNS)
        for kind in schedules:
            if kind not in SCHEDULE_KINDS:
                raise ConfigError(f"unknown schedule {kind!r}", section="schedule")
            for label, cache in caches.items():
                result = run_generation(cfg, params, cache=cache, schedule_kind=kind)
                report = evaluate(decode_latents(result.chunks), cfg.vde)
                values = report.vde_values()
                writer.writerow([
                    kind, label, cache.effective_l, cache.tau, cfg.schedule.shuffle_s, n,
                    f"{result.provenance.mean_retention:.6f}",
                    result.provenance.peak_bank_size,
                    *["" if values[m] is None else repr(values[m]) for m in METRICS],
                    provenance_signature(result.provenance),
                ])
                done, total = tracker.advance()
                console.step(f"{console.progress_bar(done, total)} {kind} × {label}")

    console.success(f"Wrote {tracker.summary} ablation cells to {out_path}")
    return out_path
