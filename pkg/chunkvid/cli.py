"""
Chunkvid CLI

Command-line entry points: `chunkvid <verb>` and the standalone
`vde-eval` drift evaluator.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 I/O error.
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, List, Optional

from chunkvid.__version__ import version
from chunkvid.config import apply_overrides, load_config
from chunkvid.console import Verbosity, console
from chunkvid.errors import ChunkvidError
from chunkvid.kv_cache import CACHE_MODES
from chunkvid.noise_schedule import SCHEDULE_KINDS
from chunkvid.vde import MOTION_KINDS, WEIGHT_KINDS, VDEConfig

EXIT_IO = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML run config (defaults when omitted)")
    parser.add_argument("--seed", type=int, help="Seed for every random stream")
    parser.add_argument("--out", help="Output directory")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true", help="Errors and summaries only")
    verbosity.add_argument("--verbose", action="store_true", help="Show per-step progress")


def _add_schedule(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--schedule", choices=SCHEDULE_KINDS, help="Chunk noise schedule")
    parser.add_argument("--eps-min", type=float, help="Noise level of the first chunk")
    parser.add_argument("--eps-max", type=float, help="Noise level of the last chunk")
    parser.add_argument("--alpha", type=float, help="Sigmoid schedule steepness")
    parser.add_argument("--shuffle-s", type=int, help="Boundary noise shuffle window (frames)")
    parser.add_argument("--n-chunks", type=int, help="Chunks to generate")


def _add_cache(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tau", type=float, help="Attention coverage kept per chunk")
    parser.add_argument("--top-l", type=int, help="Semantically retrieved chunks")
    parser.add_argument("--cache-mode", choices=CACHE_MODES, help="KV cache mode")


def _add_vde(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--segments", type=int, help="Number of segments N")
    parser.add_argument("--weights", choices=WEIGHT_KINDS, help="Segment weighting")
    parser.add_argument("--flow-tau", type=float, help="Background staticness threshold")
    parser.add_argument("--motion-kind", choices=MOTION_KINDS, help="Motion score variant")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chunkvid",
        description="Chunked video diffusion with a semantic sparse KV cache, plus drift metrics",
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    synth_parser = subparsers.add_parser("synth", help="Write the synthetic corpus as .lvt videos")
    _add_common(synth_parser)

    train_parser = subparsers.add_parser("train", help="Train the denoiser on the synthetic corpus")
    _add_common(train_parser)
    _add_schedule(train_parser)
    _add_cache(train_parser)
    train_parser.add_argument("--steps", type=int, help="Training steps")

    generate_parser = subparsers.add_parser("generate", help="Generate a video chunk by chunk")
    _add_common(generate_parser)
    _add_schedule(generate_parser)
    _add_cache(generate_parser)
    generate_parser.add_argument("--checkpoint", help="Checkpoint written by `chunkvid train`")

    evaluate_parser = subparsers.add_parser("evaluate", help="Score video drift")
    _add_common(evaluate_parser)
    _add_vde(evaluate_parser)
    evaluate_parser.add_argument("--input", required=True, help=".lvt file or PGM/PPM directory")

    ablate_parser = subparsers.add_parser("ablate", help="Schedule × cache comparison grid")
    _add_common(ablate_parser)
    _add_schedule(ablate_parser)
    _add_cache(ablate_parser)
    ablate_parser.add_argument("--checkpoint", help="Checkpoint (fresh init when omitted)")
    ablate_parser.add_argument("--schedules", nargs="+", choices=SCHEDULE_KINDS,
                               default=list(SCHEDULE_KINDS), help="Schedules to compare")
    ablate_parser.add_argument("--cache-modes", nargs="+", choices=CACHE_MODES,
                               help="Extra cache modes besides rolling and semantic")

    subparsers.add_parser("version", help="Show version")
    subparsers.add_parser("help", help="Show detailed help and examples")
    return parser


def _config_for(args):
    overrides = {
        key: getattr(args, key, None)
        for key in ("seed", "out", "schedule", "eps_min", "eps_max", "alpha", "shuffle_s",
                    "n_chunks", "tau", "top_l", "cache_mode", "steps", "segments",
                    "weights", "flow_tau", "motion_kind")
    }
    return apply_overrides(load_config(args.config), **overrides)


def _set_verbosity(args) -> None:
    if getattr(args, "quiet", False):
        console.verbosity = Verbosity.QUIET
    elif getattr(args, "verbose", False):
        console.verbosity = Verbosity.VERBOSE


def _run(action: Callable[[], None]) -> int:
    """Run a command, mapping errors to exit codes."""
    try:
        action()
    except ChunkvidError as exc:
        console.error(exc.format())
        return exc.exit_code
    except OSError as exc:
        console.error(f"Error: {exc}")
        return EXIT_IO
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    _set_verbosity(args)

    from chunkvid import pipeline

    if args.command == "synth":
        return _run(lambda: pipeline.cmd_synth(_config_for(args)))
    if args.command == "train":
        return _run(lambda: pipeline.cmd_train(_config_for(args)))
    if args.command == "generate":
        return _run(lambda: pipeline.cmd_generate(_config_for(args), args.checkpoint))
    if args.command == "evaluate":
        def evaluate():
            cfg = _config_for(args)
            pipeline.cmd_evaluate(args.input, cfg.vde, cfg.run.out_dir)
        return _run(evaluate)
    if args.command == "ablate":
        return _run(lambda: pipeline.cmd_ablate(
            _config_for(args), args.checkpoint, args.schedules, args.cache_modes
        ))
    if args.command == "version":
        cmd_version()
        return 0
    if args.command == "help":
        cmd_help()
        return 0
    parser.print_help()
    return 0


def cmd_version() -> None:
    console.panel(
        f"chunkvid v{version}\n"
        "Chunked semi-autoregressive video diffusion on a semantic sparse KV cache,\n"
        "with video drift metrics.",
        title="Version",
    )


def cmd_help() -> None:
    console.panel(
        "Videos are generated chunk by chunk. Each chunk keeps only its salient\n"
        "attention tokens, and later chunks attend to the most recent chunks plus\n"
        "the chunks whose prompts are most similar to their own.",
        title="chunkvid Help",
    )
    console.table(
        "Commands",
        [("Command", "bold"), ("Description", "")],
        [
            ["synth [--config F]", "Write the synthetic corpus as .lvt videos"],
            ["train [--steps N]", "Train; writes model.lvck, loss.csv, config.yaml"],
            ["generate [--checkpoint F]", "Generate; writes video.lvt, bank.lvkv, provenance.json"],
            ["evaluate --input P", "Drift report; writes vde.json and vde.csv"],
            ["ablate [--schedules ...]", "Schedule × cache grid; writes ablation.csv"],
            ["version", "Show version information"],
        ],
    )
    console.panel(
        "denoiser  d_model n_heads n_layers head_dim chunk_len latent_dim embed_dim gamma sample_steps\n"
        "train     steps lr disc_lr grad_clip sf_weight sf_rollout_chunks sf_sample_steps ...\n"
        "schedule  kind eps_min eps_max n_chunks alpha shuffle_s\n"
        "cache     tau top_l probe_recent probe_random seq_ctx_len capacity mode\n"
        "vde       n_segments weight_kind flow_tau epsilon_guard motion_kind workers\n"
        "corpus    scene_kind n_videos n_chunks drift frames_per_chunk frame_size square_size\n"
        "run       seed out_dir",
        title="Config sections (YAML)",
    )


# =============================================================================
# vde-eval
# =============================================================================

def vde_eval_main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="vde-eval", description="Video drift error of one video")
    parser.add_argument("--input", required=True, help=".lvt file or PGM/PPM directory")
    parser.add_argument("--segments", type=int, default=VDEConfig.n_segments,
                        help="Number of segments N")
    parser.add_argument("--weights", choices=WEIGHT_KINDS, default=VDEConfig.weight_kind,
                        help="Segment weighting")
    parser.add_argument("--flow-tau", type=float, default=VDEConfig.flow_tau,
                        help="Background staticness threshold")
    parser.add_argument("--motion-kind", choices=MOTION_KINDS, default=VDEConfig.motion_kind,
                        help="Motion score variant")
    parser.add_argument("--out", default="vde_report", help="Output directory")
    args = parser.parse_args(argv)

    from chunkvid import pipeline

    def evaluate():
        cfg = VDEConfig(
            n_segments=args.segments,
            weight_kind=args.weights,
            flow_tau=args.flow_tau,
            motion_kind=args.motion_kind,
        )
        pipeline.cmd_evaluate(args.input, cfg, Path(args.out))

    return _run(evaluate)


if __name__ == "__main__":
    sys.exit(main())
