"""Command-line interface -- pcwm <subcommand>.

Subcommands:
    sample    mesh -> normalized point cloud
    embed     cloud + bits -> watermarked cloud + key
    extract   cloud + key -> bits
    attack    cloud + attack spec -> attacked cloud
    metrics   fidelity (and optionally bit) metrics between two clouds
    train     dataset -> decoder checkpoint (+ training log)
    evaluate  dataset (+ checkpoint) -> report directory
    roc       dataset + checkpoint -> ownership ROC

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from point_watermark import watermark_config as cfg
from point_watermark.attacks import AttackSpec, apply_attack
from point_watermark.block_svd import EmbedConfig, EmbedKey, Watermark, embed, extract
from point_watermark.checkpoint import load_checkpoint, save_checkpoint
from point_watermark.dataset_manifest import build_manifest
from point_watermark.decoder_training import TrainingLog, train
from point_watermark.errors import ConfigError, InvalidAttackSpec, InvalidWatermark, WatermarkError
from point_watermark.eval_harness import (
    NeuralBitDecoder,
    ReportBundle,
    format_bundle,
    ownership_roc,
    run_evaluation,
)
from point_watermark.fidelity_metrics import bit_accuracy, ber, chamfer, iou_bits, psnr
from point_watermark.geometry_io import read_cloud, sample_file, write_cloud
from point_watermark.report_render import render_report, render_roc, render_training_curves
from point_watermark.run_config import RunConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Progress printing
# ---------------------------------------------------------------------------

def _cli_progress(event: str, data: Dict[str, Any]) -> None:
    """Pretty-print progress events to stdout."""
    indent = "    "
    if event == "manifest_built":
        print(f"  Manifest: {data['train']} train / {data['test']} test "
              f"({data['excluded']} excluded)")
    elif event == "file_excluded":
        print(f"  {indent}[skip] {data['path']}: {data['reason']}")
    elif event == "examples_prepared":
        print(f"  Prepared {data['train']} training / {data['val']} validation clouds")
    elif event == "epoch_completed":
        print(f"  {indent}epoch {data['epoch']:>3}/{data['epochs']}  "
              f"loss={data['train_loss']:.4f}/{data['val_loss']:.4f}  "
              f"acc={data['train_acc']:.3f}/{data['val_acc']:.3f}  lr={data['lr']:.1e}")
    elif event == "training_completed":
        print(f"  Best validation accuracy {data['best_val_accuracy']:.3f} "
              f"at epoch {data['best_epoch']}")
    elif event == "evaluation_started":
        print(f"  Evaluating {data['clouds']} clouds x {data['attacks']} attacks")
    elif event == "cloud_completed":
        done = data["index"] + 1
        if done == data["total"] or done % 25 == 0:
            print(f"  {indent}[{done}/{data['total']}] {data['path']}")
    elif event == "cloud_skipped":
        print(f"  {indent}[skip] {data['path']}: {data['reason']}")
    elif event == "decoder_skipped":
        print(f"  {indent}[skip DL] {data['path']}: {data['reason']}")
    elif event == "evaluation_completed":
        auc = f", AUC {data['auc']:.3f}" if data.get("auc") is not None else ""
        print(f"  Done: {data['clouds']} clouds, {data['skipped']} skipped{auc}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _run_config(args: argparse.Namespace, **overrides: Any) -> RunConfig:
    base = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    return base.with_overrides(**overrides)


def cmd_sample(args: argparse.Namespace) -> int:
    if args.points < 1:
        raise ConfigError(f"--points: must be >= 1, got {args.points}")
    cloud = sample_file(args.mesh, args.points, args.seed, args.stream)
    write_cloud(cloud, args.output)
    print(f"wrote {len(cloud)} points to {args.output}")
    return EXIT_OK


def cmd_embed(args: argparse.Namespace) -> int:
    try:
        wm = Watermark.from_string(args.bits)
    except InvalidWatermark as exc:
        raise ConfigError(f"--bits: {exc}") from None
    config = EmbedConfig(mode=args.mode, alpha=args.alpha,
                         normalized_embedding=not args.raw_frame,
                         max_iterations=args.max_iterations)
    cloud = read_cloud(args.cloud)
    wm_cloud, key = embed(cloud, wm, config.alpha, config.mode,
                          normalized_embedding=config.normalized_embedding,
                          max_iterations=config.max_iterations)
    write_cloud(wm_cloud, args.output)
    key_path = Path(args.key) if args.key else Path(args.output).with_suffix(".key.json")
    key.save(key_path)
    print(f"embedded {wm} into {args.output} (key: {key_path})")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    key = EmbedKey.load(args.key)
    print(extract(read_cloud(args.cloud), key))
    return EXIT_OK


def _parse_params(items: Sequence[str]) -> Dict[str, float]:
    params: Dict[str, float] = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--param: expected NAME=VALUE, got {item!r}")
        try:
            params[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"--param: {name} must be a number, got {value!r}") from None
    return params


def cmd_attack(args: argparse.Namespace) -> int:
    if args.spec:
        spec = AttackSpec.load(args.spec)
        if args.seed is not None:
            spec = spec.with_seed(args.seed)
    else:
        try:
            spec = AttackSpec(kind=args.kind, params=_parse_params(args.param), seed=args.seed or 0)
        except InvalidAttackSpec as exc:
            raise ConfigError(f"--kind/--param: {exc}") from None
    attacked = apply_attack(read_cloud(args.cloud), spec)
    write_cloud(attacked, args.output)
    print(f"{spec.label}: {len(attacked)} points -> {args.output}")
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    a, b = read_cloud(args.a), read_cloud(args.b)
    print(f"chamfer  {chamfer(a, b):.6g}")
    print(f"psnr     {psnr(a, b):.6g} dB")
    if args.key and args.bits:
        try:
            truth = Watermark.from_string(args.bits)
        except InvalidWatermark as exc:
            raise ConfigError(f"--bits: {exc}") from None
        decoded = extract(b, EmbedKey.load(args.key))
        print(f"bits     {decoded}")
        print(f"accuracy {bit_accuracy(truth, decoded):.6g}")
        print(f"ber      {ber(truth, decoded):.6g}")
        print(f"iou      {iou_bits(truth, decoded):.6g}")
    elif args.key or args.bits:
        raise ConfigError("--key and --bits must be given together")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _run_config(args, dataset=args.dataset, workers=args.workers)
    overrides = {k: v for k, v in (("epochs", args.epochs), ("seed", args.seed)) if v is not None}
    if overrides:
        config = config.with_overrides(train={**config.train, **overrides})

    manifest = build_manifest(config.require_dataset(), config.n_points, config.n_bits,
                              config.sample_seed, config.workers, _cli_progress)
    log = TrainingLog(log_path=Path(args.log) if args.log else None)
    ckpt = train(manifest, config.embed_config(), config.train_config(), config.decoder_config(),
                 log=log, progress_callback=_cli_progress)
    save_checkpoint(ckpt, args.output)
    print(log.summary())
    print(f"checkpoint: {args.output}")
    if args.curves:
        for path in render_training_curves(log, args.curves):
            print(f"  wrote {path}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _run_config(args, dataset=args.dataset, output_dir=args.output,
                         limit=args.limit, workers=args.workers)
    decoder = None
    if args.ckpt:
        ckpt = load_checkpoint(args.ckpt)
        ckpt.ensure_compatible(config.n_bits)
        decoder = NeuralBitDecoder(ckpt)

    manifest = build_manifest(config.require_dataset(), config.n_points, config.n_bits,
                              config.sample_seed, config.workers, _cli_progress)
    bundle = run_evaluation(
        manifest, config.embed_config(), decoder=decoder, attacks=config.attack_specs(),
        attack_seed=config.attack_seed, limit=config.limit, max_workers=config.workers,
        negatives_per_cloud=config.negatives_per_cloud, roc_seed=config.attack_seed,
        progress_callback=_cli_progress,
    )
    render_report(bundle, config.output_dir)
    print(format_bundle(bundle))
    print(f"report: {config.output_dir}")
    return EXIT_OK


def cmd_roc(args: argparse.Namespace) -> int:
    config = _run_config(args, dataset=args.dataset, output_dir=args.output, limit=args.limit,
                         negatives_per_cloud=args.negatives, workers=args.workers)
    ckpt = load_checkpoint(args.ckpt)
    ckpt.ensure_compatible(config.n_bits)
    manifest = build_manifest(config.require_dataset(), config.n_points, config.n_bits,
                              config.sample_seed, config.workers, _cli_progress)
    roc = ownership_roc(manifest, config.embed_config(), NeuralBitDecoder(ckpt),
                        config.negatives_per_cloud, config.attack_seed, config.limit, config.workers)
    render_roc(ReportBundle(roc=roc), config.output_dir)
    print(f"AUC {roc.auc:.4f} ({roc.n_positive} positive / {roc.n_negative} negative scores)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pcwm", description="Point-cloud watermarking toolkit")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("sample", help="Sample a mesh into a normalized point cloud")
    p.add_argument("mesh", help="OFF or PLY mesh")
    p.add_argument("--points", type=int, default=cfg.N_POINTS, help="Points to sample (default 1024)")
    p.add_argument("--seed", type=int, default=0, help="Sampling seed")
    p.add_argument("--stream", type=int, default=0, help="Stream id within the seed")
    p.add_argument("-o", "--output", required=True, help="Output cloud (.pcb or .xyz)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("embed", help="Embed a watermark into a normalized cloud")
    p.add_argument("cloud")
    p.add_argument("--bits", required=True, help="Watermark as a 0/1 string, e.g. 101")
    p.add_argument("--alpha", type=float, default=cfg.ALPHA, help="Embedding strength (default 2.0)")
    p.add_argument("--mode", choices=["reference", "qim"], default="reference")
    p.add_argument("--raw-frame", action="store_true",
                   help="Read spectra in the unit frame (no normalization record in the key)")
    p.add_argument("--max-iterations", type=int, default=cfg.MAX_EMBED_ITERATIONS,
                   help="Fixed-point loop cap (default 20)")
    p.add_argument("-o", "--output", required=True, help="Watermarked cloud")
    p.add_argument("--key", default=None, help="Key file (default: <output>.key.json)")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="Extract the watermark bits from a cloud")
    p.add_argument("cloud")
    p.add_argument("--key", required=True, help="Key file written by embed")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("attack", help="Apply one attack to a cloud")
    p.add_argument("cloud")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--spec", help="Attack spec JSON file")
    source.add_argument("--kind", help="Attack kind, e.g. gaussian_noise")
    p.add_argument("--param", action="append", default=[], metavar="NAME=VALUE",
                   help="Attack parameter (with --kind; repeatable)")
    p.add_argument("--seed", type=int, default=None, help="Attack seed")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("metrics", help="Fidelity metrics between two clouds")
    p.add_argument("a", help="Reference cloud")
    p.add_argument("b", help="Compared cloud")
    p.add_argument("--key", help="Key for bit metrics on the second cloud")
    p.add_argument("--bits", help="True watermark for bit metrics")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("train", help="Train the neural decoder")
    p.add_argument("--dataset", help="Dataset root (class/{train,test}/*.off)")
    p.add_argument("--config", help="Run config JSON")
    p.add_argument("-o", "--output", required=True, help="Checkpoint path")
    p.add_argument("--log", help="Training log CSV")
    p.add_argument("--curves", help="Directory for training curve SVGs")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="Training seed")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="Run the attack suite and write a report")
    p.add_argument("--dataset", help="Dataset root")
    p.add_argument("--config", "--key-config", dest="config", help="Run config JSON")
    p.add_argument("--ckpt", help="Decoder checkpoint (omit for SVD-only rows)")
    p.add_argument("-o", "--output", default=None, help="Report directory")
    p.add_argument("--limit", type=int, default=None, help="Evaluate only the first N test clouds")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("roc", help="Ownership verification ROC")
    p.add_argument("--dataset", help="Dataset root")
    p.add_argument("--config", "--key-config", dest="config", help="Run config JSON")
    p.add_argument("--ckpt", required=True, help="Decoder checkpoint")
    p.add_argument("-o", "--output", default=None, help="Report directory")
    p.add_argument("--negatives", type=int, default=None, help="Wrong patterns per cloud")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_roc)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        return args.func(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"pcwm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WatermarkError as exc:
        print(f"pcwm {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        logger.exception("internal error in '%s'", args.command)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
