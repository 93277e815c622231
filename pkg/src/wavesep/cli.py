"""Command-line interface: ``wavesep <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 numeric failure (non-finite values
or a failed gradient check), 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
GRAD_TOLERANCE = 1e-4

log = logging.getLogger("wavesep")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# commands


def cmd_synth_data(args) -> int:
    from .data import write_synth_dataset
    if args.tracks < 1 or args.duration <= 0 or args.sr <= 0:
        raise UsageError("--tracks, --duration and --sr must be positive")
    manifest = write_synth_dataset(args.out, args.tracks, args.duration, args.sr, args.seed,
                                   args.encoding)
    counts = {s: len(manifest.split(s)) for s in ("train", "valid", "test")}
    print(f"wrote {args.tracks} tracks to {args.out} "
          f"(train {counts['train']}, valid {counts['valid']}, test {counts['test']})")
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import DatasetManifest
    from .training import ConfigError, load_config, train
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        raise UsageError(f"{args.config}: {exc}") from exc
    if args.epochs is not None:
        config.epochs = args.epochs
    manifest = DatasetManifest.read(config.manifest)

    def progress(row):
        print(f"epoch {row['epoch']:3d}  train {row['train_loss']:.5f}  "
              f"valid_l1 {row['valid_l1']:.5f}  {row['wall_seconds']:.1f} s", flush=True)

    result = train(config, manifest, resume=args.resume, progress=progress)
    print(f"best epoch {result.best_epoch} valid_l1 {result.best_valid_l1:.5f} -> {result.checkpoint}")
    return EXIT_OK


def cmd_separate(args) -> int:
    from .data import DatasetManifest
    from .inference import separate
    if (args.input is None) == (args.manifest is None):
        raise UsageError("give exactly one of --input or --manifest")
    if args.shifts < 0:
        raise UsageError("--shifts must be non-negative")
    jobs = []
    if args.input is not None:
        jobs.append((Path(args.input), Path(args.out)))
    else:
        manifest = DatasetManifest.read(args.manifest)
        for entry in manifest.split(args.split):
            if entry.path is None:
                raise UsageError(f"{entry.track_id}: manifest entry has no audio path")
            jobs.append((Path(manifest.root) / entry.path / "mixture.wav",
                         Path(args.out) / entry.track_id))
    for source, out_dir in jobs:
        paths = separate(args.model, args.checkpoint, source, out_dir, shifts=args.shifts,
                         seed=args.seed, max_shift_seconds=args.max_shift)
        print(f"{source} -> {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate_directories
    if args.estimates is None and not args.baseline:
        raise UsageError("--estimates is required unless --baseline is given")
    report = evaluate_directories(args.estimates, args.references, args.frame_seconds,
                                  baseline=args.baseline, split=args.split)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out)
    summary = Path(args.summary) if args.summary else out.with_suffix(".json")
    report.write_summary(summary)
    print(f"{'source':<8} {'SDR':>8} {'SIR':>8} {'SAR':>8}")
    for s in report.sources:
        print(f"{s:<8} {report.global_median(s, 'sdr'):8.2f} {report.global_median(s, 'sir'):8.2f} "
              f"{report.global_median(s, 'sar'):8.2f}")
    print(f"wrote {out} and {summary}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .gradcases import MODEL_NAMES, OP_CASES, run_model_check, run_op_check
    if args.op is None and args.model is None:
        raise UsageError("give --op NAME (or 'all') or --model desk")
    rows = []
    if args.op is not None:
        names = sorted(OP_CASES) if args.op == "all" else [args.op]
        for name in names:
            if name not in OP_CASES:
                raise UsageError(f"unknown op {name!r}; registered ops: {', '.join(sorted(OP_CASES))}")
            rows.append((name, run_op_check(name, args.seed)))
    if args.model is not None:
        kinds = MODEL_NAMES if args.model == "desk" else [args.model]
        for kind in kinds:
            if kind not in MODEL_NAMES:
                raise UsageError(f"unknown model {kind!r}; expected desk or one of {', '.join(MODEL_NAMES)}")
            rows.append((f"model:{kind}", run_model_check(kind, args.seed)))
    failed = 0
    print(f"{'check':<22} {'rel err':>10}  result")
    for name, err in rows:
        ok = err <= args.tolerance
        failed += not ok
        print(f"{name:<22} {err:10.2e}  {'pass' if ok else 'FAIL'}")
    print(f"{len(rows) - failed}/{len(rows)} passed (tolerance {args.tolerance:g})")
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wavesep", description="Waveform music source separation toolkit.")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP worker threads")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth-data", help="write a synthetic multi-stem dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tracks", type=int, default=20, help="number of tracks (default 20)")
    p.add_argument("--duration", type=float, default=30.0, help="track length in seconds")
    p.add_argument("--sr", type=int, default=8000, help="sample rate in Hz")
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--encoding", choices=("float32", "pcm16"), default="float32",
                   help="WAV sample encoding")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="INI config file")
    p.add_argument("--resume", action="store_true", help="continue from the last checkpoint")
    p.add_argument("--epochs", type=int, default=None, help="override the configured epoch count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="separate a mixture into stems")
    p.add_argument("--model", required=True, choices=("demucs", "convtasnet"), help="model kind")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory (spec.txt + params)")
    p.add_argument("--input", help="mixture WAV file")
    p.add_argument("--manifest", help="dataset manifest; separates every track of --split")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--shifts", type=int, default=0,
                   help="random shifts to average over (0 = plain forward)")
    p.add_argument("--max-shift", type=float, default=0.5, help="largest shift in seconds")
    p.add_argument("--seed", type=int, default=0, help="shift seed")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", help="framewise SDR/SIR/SAR report")
    p.add_argument("--estimates", help="directory of estimates, one subdirectory per track")
    p.add_argument("--references", required=True,
                   help="manifest file, directory of track directories, or one track directory")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"),
                   help="split used when --references is a manifest")
    p.add_argument("--out", required=True, help="per-frame CSV report")
    p.add_argument("--summary", help="JSON summary path (default: --out with .json)")
    p.add_argument("--frame-seconds", type=float, default=1.0, help="frame length and hop")
    p.add_argument("--baseline", action="store_true",
                   help="score the mixture as the estimate of every source")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grad-check", help="finite-difference gradient checks")
    p.add_argument("--op", help="registered op name, or 'all'")
    p.add_argument("--model", help="'desk' for both desk models, or demucs / convtasnet")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=GRAD_TOLERANCE)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    from .data import DatasetError
    from .dsp import WavError
    from .models.io import CheckpointError
    try:
        if args.threads is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, WavError, DatasetError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
