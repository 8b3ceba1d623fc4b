"""Command-line front end for the benchmark and the reconstruction tooling.

Stages can run one at a time (`synth`, `build-variants`, `embed`, `eval ...`,
`tsne`) against a shared `--out-dir`, or all at once with `report`. Failures
exit with status 2 and a JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Callable, Dict, List, Optional, Sequence

from pydantic import ValidationError

import config
import experiments
import reconstructor
import reports
import storage
from config import ConfigurationError
from errors import BenchError
from schemas import ExperimentConfig, PairManifest

logger = logging.getLogger(__name__)

EXIT_FAILURE = 2
EVALUATIONS = ("closed-set", "cross-filter", "open-set", "verify")


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {"seed": args.seed}
    if args.config:
        return config.load_experiment_config(args.config, **overrides)
    if args.seed is None:
        raise ConfigurationError("Pass --config <file> or --seed; seeds are required")
    return config.build_experiment_config({}, **overrides)


def _emit(paths: Sequence[str]) -> None:
    for path in paths:
        print(path)


# --------------------------------------------------------------------------- #
# bench
# --------------------------------------------------------------------------- #


def cmd_synth(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    source = experiments.prepare_corpus(cfg.corpus, args.out_dir, fmt=cfg.image_format)
    uri = experiments.manifest_uri(args.out_dir, "source")
    experiments.write_manifest(source, uri)
    _emit([uri])


def cmd_build_variants(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    source = experiments.read_manifest(experiments.manifest_uri(args.out_dir, "source"))
    models = experiments.reconstruction_models(cfg, args.out_dir)
    variants = experiments.build_all_variants(
        source, models, cfg.seeds.filter, args.out_dir, names=cfg.variants, fmt=cfg.image_format
    )
    _emit([experiments.manifest_uri(args.out_dir, name) for name in variants])


def cmd_embed(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    backbone = args.backbone or cfg.backbone
    variants = experiments.load_variants(args.out_dir, cfg.variants)
    experiments.embed_variants(variants, backbone, args.out_dir)
    _emit([experiments.embeddings_uri(args.out_dir, backbone, name) for name in variants])


def cmd_eval(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    ctx = experiments.load_context(cfg, args.out_dir)
    provenance = reports.provenance_for(cfg, ctx.variants)
    if args.evaluation == "closed-set":
        written = reports.write_datasets(ctx, args.out_dir, provenance)
        written += reports.write_closed_set(experiments.run_closed_set(ctx), args.out_dir, provenance)
    elif args.evaluation == "cross-filter":
        written = reports.write_cross_filter(experiments.run_cross_filter(ctx), args.out_dir, provenance)
    elif args.evaluation == "open-set":
        written = reports.write_open_set(experiments.run_open_set(ctx), args.out_dir, provenance)
    else:
        written = reports.write_verification(experiments.run_verification(ctx), args.out_dir, provenance)
    _emit(written)


def cmd_tsne(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    ctx = experiments.load_context(cfg, args.out_dir)
    _emit(reports.write_tsne(ctx, args.out_dir, reports.provenance_for(cfg, ctx.variants)))


def cmd_report(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    _emit(reports.run_pipeline(cfg, args.out_dir))


BENCH_COMMANDS: Dict[str, Callable[[ExperimentConfig, argparse.Namespace], None]] = {
    "synth": cmd_synth,
    "build-variants": cmd_build_variants,
    "embed": cmd_embed,
    "eval": cmd_eval,
    "tsne": cmd_tsne,
    "report": cmd_report,
}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML experiment file")
    parser.add_argument("--seed", type=int, help="Override the split, filter and train seeds")
    parser.add_argument("--out-dir", default="bench-out", help="Local directory or s3:// prefix for all artifacts")


def build_bench_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description="Face-filter robustness benchmark")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth", "build-variants", "tsne", "report"):
        _common(sub.add_parser(name))
    embed = sub.add_parser("embed")
    _common(embed)
    embed.add_argument("--backbone", help="Backbone id; defaults to the config's backbone")
    evaluate = sub.add_parser("eval")
    evaluate.add_argument("evaluation", choices=EVALUATIONS)
    _common(evaluate)
    return parser


# --------------------------------------------------------------------------- #
# reconstruct
# --------------------------------------------------------------------------- #


def pairs_uri(out_dir: str, filter_id: str) -> str:
    return storage.join(out_dir, f"pairs/{filter_id}.json")


def cmd_make_pairs(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    if args.manifest:
        corpus = experiments.read_manifest(args.manifest)
    else:
        corpus = experiments.prepare_corpus(cfg.reconstruction.corpus, args.out_dir)
    pairs = reconstructor.make_pairs(corpus, args.filter, args.out_dir)
    uri = pairs_uri(args.out_dir, args.filter)
    storage.write_text(uri, pairs.model_dump_json(indent=2))
    _emit([uri])


def cmd_train(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    pairs = PairManifest.model_validate_json(storage.read_text(args.pairs))
    recon = cfg.reconstruction
    hyper = recon.hyper.model_copy(update={"seed": cfg.seeds.train})
    if args.epochs is not None:
        hyper = hyper.model_copy(update={"epochs": args.epochs})
    model = reconstructor.build_model(recon.unet, cfg.seeds.train)
    report = reconstructor.train(model, reconstructor.load_pairs(pairs, recon.unet.input_size), hyper, show_progress=True)
    model.trained_on = pairs.corpus
    uri = args.checkpoint or storage.join(args.out_dir, f"models/unet_{pairs.filter_id}.pt")
    reconstructor.save_checkpoint(model, uri)
    storage.write_text(f"{uri}.report.json", report.model_dump_json(indent=2))
    _emit([uri])


def cmd_apply(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    model = reconstructor.load_checkpoint(args.checkpoint)
    manifest = experiments.read_manifest(args.manifest)
    experiments.check_leak(manifest, [model])
    result = reconstructor.reconstruct_manifest(model, manifest, args.name, args.out_dir, fmt=cfg.image_format)
    uri = experiments.manifest_uri(args.out_dir, args.name)
    experiments.write_manifest(result, uri)
    _emit([uri])


RECONSTRUCT_COMMANDS: Dict[str, Callable[[ExperimentConfig, argparse.Namespace], None]] = {
    "make-pairs": cmd_make_pairs,
    "train": cmd_train,
    "apply": cmd_apply,
}


def build_reconstruct_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reconstruct", description="Train and apply the eyewear reconstruction network")
    sub = parser.add_subparsers(dest="command", required=True)

    pairs = sub.add_parser("make-pairs", help="Render occluded/clean pairs from a corpus")
    _common(pairs)
    pairs.add_argument("--filter", default="shades_no_leak", choices=("shades_leak", "shades_no_leak"))
    pairs.add_argument("--manifest", help="Corpus manifest; defaults to the config's reconstruction corpus")

    train = sub.add_parser("train", help="Train a network on a pair manifest")
    _common(train)
    train.add_argument("--pairs", required=True, help="Pair manifest written by make-pairs")
    train.add_argument("--checkpoint", help="Checkpoint destination")
    train.add_argument("--epochs", type=int)

    apply = sub.add_parser("apply", help="Reconstruct every image of a manifest")
    _common(apply)
    apply.add_argument("--checkpoint", required=True)
    apply.add_argument("--manifest", required=True)
    apply.add_argument("--name", required=True, help="Name of the reconstructed variant")
    return parser


# --------------------------------------------------------------------------- #
# Entry points
# --------------------------------------------------------------------------- #


def _run(parser: argparse.ArgumentParser, commands, argv: Optional[List[str]]) -> int:
    args = parser.parse_args(argv)
    config.configure_logging()
    try:
        cfg = _experiment_config(args)
        commands[args.command](cfg, args)
    except (BenchError, ConfigurationError) as exc:
        logger.error("command_failed", extra={"command": args.command, "error": type(exc).__name__})
        print(json.dumps(exc.to_record(), sort_keys=True, default=str), file=sys.stderr)
        return EXIT_FAILURE
    except ValidationError as exc:
        record = {"error": "ValidationError", "message": str(exc), "details": {"errors": exc.errors(include_url=False)}}
        print(json.dumps(record, sort_keys=True, default=str), file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:
        logger.exception("command_failed", extra={"command": args.command, "error": type(exc).__name__})
        record = {"error": type(exc).__name__, "message": str(exc), "details": {}}
        print(json.dumps(record, sort_keys=True, default=str), file=sys.stderr)
        return EXIT_FAILURE
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    return _run(build_bench_parser(), BENCH_COMMANDS, argv)


def reconstruct_main(argv: Optional[List[str]] = None) -> int:
    return _run(build_reconstruct_parser(), RECONSTRUCT_COMMANDS, argv)
