#!/usr/bin/env python3
"""
TinySpeech Command Line

Runs the keyword-spotting pipeline end to end:
1. featurize - MFCC stacks from WAV files
2. train     - SGD training of a config-defined network
3. eval      - Accuracy of one or more saved models on a split
4. analyze   - Params, mult-adds, model size and deployment constraints
5. quantize  - 4/8-bit post-training weight quantization
6. export    - Re-encode a model file (f32 by default)

Every subcommand is reproducible from its arguments and input files.

Usage:
    # Complexity table for a shipped template
    python -m scripts.tinyspeech analyze --config configs/tinyspeech-z.cfg --input-shape 1,1,98,40

    # Desk-scale training on the synthetic tone dataset
    python -m scripts.tinyspeech train --synthetic 3x200 --seed 7 --out metrics.json --save-model m.tspn

    # Quantize, then compare both models
    python -m scripts.tinyspeech quantize --model m.tspn --bits 8 --out m8.tspn
    python -m scripts.tinyspeech eval --model m.tspn --model m8.tspn --synthetic 3x200 --seed 7

Exit codes:
    0 success, 1 validation error, 2 I/O error
"""

import re
import sys
import json
import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

import pandas as pd

from src.complexity import ConstraintSpec, analyze, check_constraints
from src.dataset import (
    ClipSet,
    SampleManifest,
    load_background_noise,
    load_features,
    load_splits,
    read_clip,
    scan_dataset,
    synth_dataset,
)
from src.errors import ConfigError, TinySpeechError
from src.frontend import DEFAULT_FRONTEND, mfcc_stack, write_stack_binary, write_stack_csv
from src.model_graph import INPUT_MEAN, INPUT_STD, build_model, load_config, with_labels
from src.quantizer import forward_delta, quantize_model, stored_weight_bits
from src.serialization import load_model, read_format_version, save_model
from src.settings import DEFAULT_HYPERPARAMS, configure_logging
from src.tensor import Rng
from src.trainer import TrainConfig, evaluate, train

configure_logging()
logger = logging.getLogger('tinyspeech')

DEFAULT_CONFIG = project_root / 'configs' / 'tinyspeech-z.cfg'

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2


# =============================================================================
# HELPERS
# =============================================================================

def parse_synthetic(value: str) -> Tuple[int, int]:
    """'KxN' -> (K classes, N clips per class)."""
    match = re.fullmatch(r'(\d+)x(\d+)', value.strip())
    if not match:
        raise ConfigError(f"--synthetic expects KxN (e.g. 3x200), got '{value}'")
    return int(match.group(1)), int(match.group(2))


def parse_shape(value: str) -> Tuple[int, ...]:
    try:
        shape = tuple(int(v) for v in value.split(','))
    except ValueError:
        raise ConfigError(f"--input-shape expects N,C,T,F integers, got '{value}'")
    if len(shape) != 4:
        raise ConfigError(f"--input-shape needs 4 dims, got {len(shape)}")
    return shape


def parse_labels(value: Optional[str]) -> Optional[List[str]]:
    if not value:
        return None
    return [v.strip() for v in value.split(',') if v.strip()]


def write_json(path: Optional[str], payload: Dict[str, Any]) -> None:
    if not path:
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    logger.info(f"Wrote {path}")


def banner(title: str) -> None:
    print("\n" + "=" * 80)
    print(title)
    print("=" * 80)


def synthetic_clips(spec: str, seed: int) -> ClipSet:
    n_classes, n_per_class = parse_synthetic(spec)
    return synth_dataset(n_per_class, n_classes, seed)


# =============================================================================
# SUBCOMMANDS
# =============================================================================

def cmd_featurize(args) -> int:
    """MFCC stack per WAV file; directory runs keep going past bad files."""
    write = write_stack_csv if args.csv else write_stack_binary
    suffix = '.csv' if args.csv else '.mfcc'

    if args.wav:
        stack = mfcc_stack(read_clip(args.wav, DEFAULT_FRONTEND.sample_rate).samples)
        out = Path(args.out) if args.out else Path(args.wav).with_suffix(suffix)
        write(stack, out)
        print(f"{args.wav}: {stack.n_frames} x {stack.n_mfcc} -> {out}")
        return EXIT_OK

    root = Path(args.dir)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    out_root = Path(args.out) if args.out else root
    done, failed = 0, 0
    for wav in sorted(root.rglob('*.wav')):
        target = out_root / wav.relative_to(root).with_suffix(suffix)
        try:
            stack = mfcc_stack(read_clip(wav, DEFAULT_FRONTEND.sample_rate).samples)
            target.parent.mkdir(parents=True, exist_ok=True)
            write(stack, target)
            done += 1
        except (TinySpeechError, OSError) as e:
            logger.error(f"Error featurizing {wav}: {e}")
            failed += 1

    print(f"Featurized {done} files into {out_root} ({failed} failed)")
    return EXIT_OK if failed == 0 else EXIT_INVALID


def _manifest(args, seed: int) -> Tuple[SampleManifest, Optional[ClipSet]]:
    """Manifest from --data or --synthetic, split with --val-pct/--test-pct."""
    if args.synthetic:
        if args.labels or args.map_unknown:
            logger.warning("--labels and --map-unknown are ignored with --synthetic")
        clips = synthetic_clips(args.synthetic, seed)
        return clips.to_manifest(args.val_pct, args.test_pct), clips

    if args.map_unknown and not args.labels:
        raise ConfigError("--map-unknown needs --labels")
    manifest = scan_dataset(args.data, parse_labels(args.labels), map_unknown=args.map_unknown,
                            val_pct=args.val_pct, test_pct=args.test_pct)
    return manifest, None


def _load_data(args, seed: int):
    """(DatasetSplits) from --data or --synthetic."""
    manifest, clips = _manifest(args, seed)
    if clips is not None:
        return load_splits(manifest, clips=clips.by_path())

    noise = []
    if getattr(args, 'noise_snr', None) is not None:
        noise = load_background_noise(args.data)
        if not noise:
            logger.warning(f"No background noise clips under {args.data}; training without noise")
    return load_splits(manifest, noise_clips=noise, noise_snr=getattr(args, 'noise_snr', None), seed=seed)


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.noise_snr is not None and args.synthetic:
        logger.warning("--noise-snr needs a dataset with _background_noise_; ignored with --synthetic")
        args.noise_snr = None
    data = _load_data(args, args.seed)

    if config.n_classes != len(data.labels) or (config.labels or []) != data.labels:
        logger.info(f"Retargeting {config.name} to {len(data.labels)} labels")
        config = with_labels(config, data.labels)

    model = build_model(config, seed=args.seed)
    train_config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        momentum=args.momentum,
        seed=args.seed,
        checkpoint_dir=Path(args.checkpoint_dir) if args.checkpoint_dir else None,
    )
    report = train(model, data, train_config)

    banner(f"TRAINING SUMMARY: {config.name}")
    print(f"Labels: {', '.join(data.labels)}")
    print(f"Samples: train={len(data.train)}, val={len(data.val)}, test={len(data.test)}")
    print(f"Params: {model.param_count}")
    print()
    print(report.to_frame().to_string(index=False))
    print()
    print(f"Best epoch: {report.best_epoch}  val_acc={report.best_val_acc}")
    print(f"Test accuracy: {report.test_acc}")
    print(f"Constraints: {'PASS' if report.constraints.get('passed') else 'FAIL'}")
    if report.constraints.get('checks', {}).get('weight_bits', {}).get('passed') is False:
        print(f"  weights are float; run quantize --bits {config.weight_bits} to meet the weight-width limit")
    print(f"Wall time: {report.wall_time_s:.1f}s")
    print("=" * 80)

    if args.out:
        report.save(args.out)
        logger.info(f"Wrote {args.out}")
    if args.save_model:
        save_model(model, args.save_model)
    return EXIT_OK


def cmd_eval(args) -> int:
    models = [(path, load_model(path)) for path in args.model]

    manifest, clips = _manifest(args, args.seed)
    split = load_features(manifest, args.split, clips=clips.by_path() if clips is not None else None)
    labels = list(manifest.labels)

    rows = []
    for path, model in models:
        if model.n_classes != len(labels):
            raise ConfigError(f"{path}: model has {model.n_classes} classes, data has {len(labels)} labels")
        if model.config.labels and list(model.config.labels) != labels:
            raise ConfigError(f"{path}: model labels {model.config.labels} do not match data labels {labels}")
        rows.append({
            'model': str(path),
            'params': model.param_count,
            'weight_bits': stored_weight_bits(model),
            'accuracy': evaluate(model, split),
        })

    reference = models[0][1]
    for path, model in models[1:]:
        delta = forward_delta(reference, model, split.x)
        logger.info(f"Max probability delta vs {models[0][0]}: {delta:.3g} ({path})")

    banner(f"EVALUATION: {args.split} split ({len(split)} samples)")
    print(pd.DataFrame(rows).to_string(index=False))
    print("=" * 80)

    write_json(args.out, {'split': args.split, 'samples': len(split), 'models': rows})
    return EXIT_OK


def cmd_analyze(args) -> int:
    config = load_config(args.config)
    shape = parse_shape(args.input_shape) if args.input_shape else None
    report = analyze(config, shape, args.bits)

    banner(f"COMPLEXITY: {config.name}")
    print(report.to_frame().to_string(index=False))
    print()
    print(f"Input shape: {tuple(report.input_shape)}")
    print(f"Total params: {report.total_params}")
    print(f"Total mult-adds: {report.total_mult_adds}")
    print(f"Model size: {report.model_size_kbits:.1f} kbits at {report.weight_bits}-bit")
    if report.total_params:
        ratio = report.baseline_kbits / report.model_size_kbits
        print(f"32-bit baseline: {report.baseline_kbits:.1f} kbits ({ratio:.1f}x larger)")

    if args.check_constraints:
        verdict = check_constraints(
            report, args.val_acc, ConstraintSpec(micro_ops_only=config.micro_ops_only), config
        )
        print()
        print(f"Constraints: {'PASS' if verdict.passed else 'FAIL'}")
        for name, check in verdict.checks.items():
            status = 'ok' if check.passed else f"FAIL ({check.reason})"
            print(f"  {name:<14} value={check.value} limit={check.limit} {status}")
    print("=" * 80)

    write_json(args.out, report.to_dict())
    return EXIT_OK


def cmd_quantize(args) -> int:
    model = load_model(args.model)
    quantized, report = quantize_model(model, args.bits, args.biases_full_precision)

    # fixed sample batch so the delta is reproducible
    batch = Rng(0).normal(0.0, 1.0, (8,) + tuple(model.input_shape[1:]))
    batch = batch * model.buffers[INPUT_STD] + model.buffers[INPUT_MEAN]
    delta = forward_delta(model, quantized, batch)
    logger.info(f"Max probability delta on the fixed batch: {delta:.3g}")

    save_model(quantized, args.out)

    banner(f"QUANTIZATION: {args.bits}-bit")
    if len(report.tensors):
        print(report.to_frame().to_string(index=False))
        print()
    print(f"Params: {report.total_params} ({report.weight_params} weights, {report.other_params} other)")
    print(f"Model size: {report.model_size_kbits:.1f} kbits")
    print(f"Max abs weight error: {report.max_abs_error:.3g}")
    print(f"Max probability delta: {delta:.3g}")
    print("=" * 80)

    write_json(args.report, {**report.to_dict(), 'forward_delta': delta})
    return EXIT_OK


def cmd_export(args) -> int:
    model = load_model(args.model)
    path = save_model(model, args.out, dtype=args.dtype)
    version = read_format_version(path.read_bytes())
    print(f"Exported {args.model} -> {path} ({args.dtype}, format version {version})")
    return EXIT_OK


COMMANDS = {
    'featurize': cmd_featurize,
    'train': cmd_train,
    'eval': cmd_eval,
    'analyze': cmd_analyze,
    'quantize': cmd_quantize,
    'export': cmd_export,
}


# =============================================================================
# CLI
# =============================================================================

def add_split_args(p: argparse.ArgumentParser) -> None:
    """Dataset selection shared by train and eval; eval must repeat the train values."""
    p.add_argument('--labels', help='Comma-separated label directories to use (default: all)')
    p.add_argument('--map-unknown', action='store_true',
                   help='Keep unlisted label directories as one _unknown_ class (needs --labels)')
    p.add_argument('--val-pct', type=float, default=10.0, help='Validation share of the speaker hash (%%)')
    p.add_argument('--test-pct', type=float, default=10.0, help='Test share of the speaker hash (%%)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='tinyspeech',
        description='TinySpeech keyword-spotting engine',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Complexity of a template
  python -m scripts.tinyspeech analyze --config configs/tinyspeech-z.cfg --input-shape 1,1,98,40

  # Train on synthetic tone bursts
  python -m scripts.tinyspeech train --synthetic 3x200 --seed 7 --epochs 20 --save-model m.tspn

  # Train on a Speech Commands tree
  python -m scripts.tinyspeech train --config configs/tinyspeech-y.cfg --data speech_commands \\
      --labels yes,no,up,down --out metrics.json

Exit codes: 0 success, 1 validation error, 2 I/O error
        """
    )
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('featurize', help='Write MFCC stacks for WAV files')
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--wav', help='Single WAV file')
    source.add_argument('--dir', help='Directory searched recursively for WAV files')
    p.add_argument('--out', help='Output file (--wav) or directory (--dir)')
    p.add_argument('--csv', action='store_true', help='Write CSV instead of f32 binary')

    p = sub.add_parser('train', help='Train a model')
    p.add_argument('--config', default=str(DEFAULT_CONFIG), help='Architecture config (JSON)')
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--data', help='Dataset root (one directory per label)')
    source.add_argument('--synthetic', help='Synthetic tone dataset KxN (K classes, N clips each)')
    p.add_argument('--epochs', type=int, default=DEFAULT_HYPERPARAMS.epochs)
    p.add_argument('--batch', type=int, default=DEFAULT_HYPERPARAMS.batch_size)
    p.add_argument('--lr', type=float, default=DEFAULT_HYPERPARAMS.learning_rate)
    p.add_argument('--momentum', type=float, default=DEFAULT_HYPERPARAMS.momentum)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--checkpoint-dir', help='Save epoch_XXX.tspn after every epoch')
    p.add_argument('--out', help='Metrics JSON (CSV written alongside)')
    p.add_argument('--save-model', help='Save the trained model (TSPN)')
    p.add_argument('--noise-snr', type=float, help='Mix _background_noise_ into training clips at this SNR (dB)')
    add_split_args(p)

    p = sub.add_parser('eval', help='Accuracy of saved models')
    p.add_argument('--model', action='append', required=True, help='Model file (repeatable)')
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--data', help='Dataset root')
    source.add_argument('--synthetic', help='Synthetic tone dataset KxN')
    p.add_argument('--split', choices=['train', 'val', 'test'], default='test')
    add_split_args(p)
    p.add_argument('--seed', type=int, default=0, help='Synthetic dataset seed')
    p.add_argument('--out', help='Results JSON')

    p = sub.add_parser('analyze', help='Params, mult-adds, size and constraints')
    p.add_argument('--config', required=True, help='Architecture config (JSON)')
    p.add_argument('--input-shape', help='N,C,T,F (default: the config input shape)')
    p.add_argument('--bits', type=int, choices=[4, 8, 16, 32], help='Weight width (default: config weight_bits)')
    p.add_argument('--check-constraints', action='store_true', help='Evaluate the deployment indicator')
    p.add_argument('--val-acc', type=float, help='Validation accuracy for the constraint check')
    p.add_argument('--out', help='Report JSON')

    p = sub.add_parser('quantize', help='Post-training weight quantization')
    p.add_argument('--model', required=True, help='Input model file')
    p.add_argument('--bits', type=int, choices=[4, 8, 32], default=8)
    p.add_argument('--out', required=True, help='Quantized model file')
    p.add_argument('--biases-full-precision', action='store_true', help='Count non-weight params at 32 bits')
    p.add_argument('--report', help='Quantization report JSON')

    p = sub.add_parser('export', help='Re-encode a model file')
    p.add_argument('--model', required=True, help='Input model file')
    p.add_argument('--out', required=True, help='Output model file')
    p.add_argument('--dtype', choices=['f32', 'f64'], default='f32')

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand, map failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help exits 0; usage errors are validation errors
        return EXIT_OK if not e.code else EXIT_INVALID

    try:
        return COMMANDS[args.command](args)
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except (TinySpeechError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_INVALID


def main():
    """Main entry point."""
    sys.exit(run())


if __name__ == '__main__':
    main()
