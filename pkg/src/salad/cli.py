"""Command-line entry point: ``salad <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime or data error.
Settings resolve as flags > ``--config`` JSON file > built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

log = logging.getLogger("salad")

SUBCOMMANDS = ("simulate", "features", "train", "eval", "localize", "tramp", "bench", "grid")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--threads", type=int, default=1,
                        help="upper bound on BLAS / worker threads (default 1)")
    common.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--config", type=Path, help="JSON file of flag values for the subcommand")

    parser = _Parser(prog="salad", description="FOA sound source localization toolkit")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True

    p = sub.add_parser("grid", parents=[common], help="describe the DOA class grid")
    p.add_argument("--alpha", type=float, default=10.0, help="grid resolution in degrees")
    p.add_argument("--csv", help="write class centers as CSV to this path ('-' for stdout)")

    p = sub.add_parser("simulate", parents=[common], help="render a labeled synthetic dataset")
    p.add_argument("--n", type=int, default=None, help="number of sequences")
    p.add_argument("--sources", type=_int_list, default=[1], help="source count(s), e.g. 1 or 1,2")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--speech-dir", type=Path, default=None, help="folder of mono speech WAVs")
    p.add_argument("--fft-size", type=int, default=1024)
    p.add_argument("--bins", type=int, default=None, help="keep only the lowest N frequency bins")
    p.add_argument("--frames", type=int, default=25, help="frames per sequence")
    p.add_argument("--no-wav", action="store_true", help="skip writing the FOA WAV files")

    p = sub.add_parser("features", parents=[common], help="FOA WAV -> .sldf feature sequences")
    p.add_argument("--in", dest="input", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None,
                   help="output stem; writes <stem>_NNNN.sldf plus <stem>.index.jsonl")
    p.add_argument("--frames", type=int, default=25)
    p.add_argument("--fft-size", type=int, default=1024)
    p.add_argument("--bins", type=int, default=None)

    p = sub.add_parser("train", parents=[common], help="train a model on a dataset manifest")
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--val-manifest", type=Path, default=None,
                   help="validation manifest (default: the training manifest)")
    p.add_argument("--out", type=Path, default=None, help="checkpoint path (.sldc)")
    p.add_argument("--arch", default="CMH-1enc-10H", help="model name such as MH-2enc-4H")
    p.add_argument("--conv-channels", type=int, default=64)
    p.add_argument("--pools", type=_int_list, default=[4, 4, 4, 2, 2, 1],
                   help="frequency pool size per conv block")
    p.add_argument("--width", type=int, default=None, help="model width G (default: derived)")
    p.add_argument("--d-head", type=int, default=None)
    p.add_argument("--cmh-norm", choices=["joint", "per_head"], default="joint")
    p.add_argument("--alpha", type=float, default=10.0)
    p.add_argument("--fft-size", type=int, default=1024, help="STFT length the features used")
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=20, help="early-stopping patience (epochs)")
    p.add_argument("--lr-patience", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=10.0, help="validation accuracy tolerance")
    p.add_argument("--augment", action="store_true",
                   help="randomly rotate training sequences about the vertical axis and flip them")
    p.add_argument("--history", type=Path, default=None, help="write per-epoch CSV here")

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a manifest")
    p.add_argument("--model", type=Path, default=None)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--tolerances", type=_float_list, default=[10.0, 15.0])
    p.add_argument("--csv", default=None, help="write the metrics row as CSV ('-' for stdout)")

    p = sub.add_parser("localize", parents=[common], help="estimate DOAs in a FOA WAV file")
    p.add_argument("--model", type=Path, default=None)
    p.add_argument("--in", dest="input", type=Path, default=None)
    p.add_argument("--sources", type=int, default=1)

    p = sub.add_parser("tramp", parents=[common], help="DNN-free histogram localizer")
    p.add_argument("--in", dest="input", type=Path, default=None)
    p.add_argument("--sources", type=int, default=1)
    p.add_argument("--alpha", type=float, default=10.0)
    p.add_argument("--fft-size", type=int, default=1024)
    p.add_argument("--weight-exponent", type=float, default=2.0)

    p = sub.add_parser("bench", parents=[common], help="inference latency versus worker count")
    p.add_argument("--model", type=Path, default=None)
    p.add_argument("--workers", type=_int_list, default=[1, 2, 4, 8])
    p.add_argument("--manifest", type=Path, default=None,
                   help="feature sequences to time (default: random features)")
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--csv", default=None, help="write timing rows as CSV ('-' for stdout)")
    return parser


REQUIRED = {
    "simulate": ("n", "out"),
    "features": ("input", "out"),
    "train": ("manifest", "out"),
    "eval": ("model", "manifest"),
    "localize": ("model", "input"),
    "tramp": ("input",),
    "bench": ("model",),
    "grid": (),
}


def _resolve(parser: _Parser, argv) -> argparse.Namespace:
    """Parse twice: once to find --config, then with its values installed as defaults."""
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            values = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config file {args.config}: {exc}")
        if not isinstance(values, dict):
            parser.error(f"config file {args.config} must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        values = {k.replace("-", "_"): v for k, v in values.items()}
        unknown = sorted(set(values) - known)
        if unknown:
            parser.error(f"unknown keys in {args.config}: {', '.join(unknown)}")
        # list-valued flags accept a bare number in the file
        list_flags = {a.dest for a in sub._actions if a.type in (_int_list, _float_list)}
        for key in list_flags & set(values):
            if isinstance(values[key], (int, float)):
                values[key] = [values[key]]
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    missing = [k for k in REQUIRED[args.command] if getattr(args, k) is None]
    if missing:
        flags = ", ".join("--" + ("in" if k == "input" else k.replace("_", "-")) for k in missing)
        parser.error(f"{args.command} needs {flags} (on the command line or in --config)")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    return args


def _emit_csv(target, text: str) -> None:
    if target is None:
        return
    if target == "-":
        sys.stdout.write(text)
    else:
        Path(target).write_text(text)


# -- subcommands --------------------------------------------------------------


def cmd_grid(args) -> int:
    from .grid import build_grid

    grid = build_grid(args.alpha)
    lo, hi = grid.pairwise_separation()
    print(f"C = {grid.n_classes}")
    print(f"{'ring':>4}  {'elevation':>10}  {'classes':>7}")
    start = 0
    for r, size in enumerate(grid.ring_sizes):
        print(f"{r:>4}  {grid.elevations[start]:>10.2f}  {size:>7}")
        start += size
    print(f"pairwise separation: min {lo:.3f} deg, max {hi:.3f} deg")
    if args.csv is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "elevation_deg", "azimuth_deg"])
        for i in range(grid.n_classes):
            w.writerow([i, f"{grid.elevations[i]:.6f}", f"{grid.azimuths[i]:.6f}"])
        _emit_csv(args.csv, buf.getvalue())
    return 0


def cmd_simulate(args) -> int:
    from .features import StftSpec
    from .simulate import build_dataset

    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if any(s not in (1, 2, 3) for s in args.sources):
        raise UsageError("--sources must be drawn from 1, 2, 3")
    records = build_dataset(args.n, args.sources, args.out, seed=args.seed,
                            stft_spec=StftSpec(args.fft_size, args.fft_size // 2),
                            n_frames=args.frames, n_bins=args.bins, speech_dir=args.speech_dir,
                            write_wav=not args.no_wav)
    print(f"wrote {len(records)} sequences to {args.out / 'manifest.jsonl'}")
    return 0


def cmd_features(args) -> int:
    from .features import StftSpec, extract_features, frame_sequences, read_foa_wav, save_sldf

    signal = read_foa_wav(args.input)
    feats = extract_features(signal, StftSpec(args.fft_size, args.fft_size // 2), args.bins)
    seqs = frame_sequences(feats, args.frames)
    if not seqs:
        raise ValueError(f"{args.input}: {feats.shape[0]} frames is shorter than one "
                         f"{args.frames}-frame sequence")
    stem = args.out.with_suffix("") if args.out.suffix == ".sldf" else args.out
    stem.parent.mkdir(parents=True, exist_ok=True)
    index = []
    for k, seq in enumerate(seqs):
        path = stem.parent / f"{stem.name}_{k:04d}.sldf"
        save_sldf(path, seq)
        index.append({"features_path": path.name, "first_frame": k * args.frames,
                      "n_frames": args.frames})
    index_path = stem.parent / f"{stem.name}.index.jsonl"
    index_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in index))
    print(f"wrote {len(seqs)} sequences of shape {seqs[0].shape}; index {index_path}")
    return 0


def cmd_train(args) -> int:
    from .model import SaladConfig, build_model, save_checkpoint
    from .train import TrainConfig, load_manifest, train_loop

    train_set = load_manifest(args.manifest)
    val_set = load_manifest(args.val_manifest) if args.val_manifest else train_set
    _, n_frames, n_freq, ch = train_set.features.shape
    cfg = dict(n_frames=n_frames, n_freq=n_freq, in_channels=ch, conv_channels=args.conv_channels,
               conv_blocks=len(args.pools), pool_sizes=tuple(args.pools), grid_alpha=args.alpha,
               d_head=args.d_head, cmh_norm=args.cmh_norm, dtype=args.dtype, fft_size=args.fft_size)
    f = n_freq
    for k in args.pools:
        f //= max(k, 1)
    cfg["width"] = args.width if args.width is not None else args.conv_channels * f
    config = SaladConfig.from_name(args.arch, **cfg)
    model = build_model(config, seed=args.seed)
    log.info("model %s with %d parameters", config.name, model.count_params())
    tcfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
                       early_stop_patience=args.patience, lr_patience=args.lr_patience,
                       seed=args.seed, tolerance=args.tolerance, augment=args.augment)
    model, hist = train_loop(model, train_set, val_set, tcfg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, args.out)
    if args.history is not None:
        rows = ["epoch,train_loss,val_accuracy,learning_rate"]
        rows += [f"{e + 1},{l},{a},{r}" for e, (l, a, r) in
                 enumerate(zip(hist.train_loss, hist.val_accuracy, hist.learning_rate))]
        args.history.write_text("\n".join(rows) + "\n")
    print(f"best validation accuracy {hist.best_accuracy:.2f}% at epoch {hist.best_epoch}; "
          f"saved {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .evaluate import compute_metrics, format_report, match_estimates
    from .model import infer_sequence, load_checkpoint
    from .train import load_manifest

    model = load_checkpoint(args.model)
    data = load_manifest(args.manifest)
    errors = [match_estimates(infer_sequence(model, f, len(d)), d)
              for f, d in zip(data.features, data.doas)]
    report = compute_metrics(errors, args.tolerances)
    print(format_report(report, model.config.name))
    if args.csv is not None:
        keys = [f"acc_{t:g}" for t in report.accuracy] + ["mean_err", "median_err", "std_err", "n"]
        vals = [f"{a:.4f}" for a in report.accuracy.values()] + [
            f"{report.mean_err:.4f}", f"{report.median_err:.4f}", f"{report.std_err:.4f}",
            str(report.n_sequences)]
        _emit_csv(args.csv, "model," + ",".join(keys) + "\n" + model.config.name + ","
                  + ",".join(vals) + "\n")
    return 0


def _print_doas(doas) -> None:
    for el, az in doas:
        print(f"az {az:8.2f}  el {el:7.2f}")


def cmd_localize(args) -> int:
    from .features import StftSpec, extract_features, frame_sequences, read_foa_wav
    from .grid import extract_peaks
    from .model import load_checkpoint

    model = load_checkpoint(args.model)
    cfg = model.config
    feats = extract_features(read_foa_wav(args.input), StftSpec(cfg.fft_size, cfg.fft_size // 2),
                             cfg.n_freq)
    seqs = frame_sequences(feats, cfg.n_frames)
    if not seqs:
        raise ValueError(f"{args.input}: {feats.shape[0]} frames is shorter than one "
                         f"{cfg.n_frames}-frame sequence")
    probs = model.forward(np.stack(seqs)).mean(axis=(0, 1))
    _print_doas([model.grid.center(i) for i in extract_peaks(probs, model.grid, args.sources)])
    return 0


def cmd_tramp(args) -> int:
    from .features import StftSpec, read_foa_wav, stft
    from .grid import build_grid
    from .tramp import TrampConfig, tramp_localize

    spec = stft(read_foa_wav(args.input), StftSpec(args.fft_size, args.fft_size // 2))
    doas = tramp_localize(spec, build_grid(args.alpha), args.sources,
                          TrampConfig(weight_exponent=args.weight_exponent))
    _print_doas(doas)
    return 0


def cmd_bench(args) -> int:
    from .bench import benchmark_inference
    from .model import load_checkpoint
    from .train import load_manifest

    model = load_checkpoint(args.model)
    cfg = model.config
    if args.manifest is not None:
        seqs = list(load_manifest(args.manifest, limit=16).features)
    else:
        rng = np.random.default_rng(args.seed)
        seqs = [rng.standard_normal((cfg.n_frames, cfg.n_freq, cfg.in_channels)) for _ in range(4)]
    hop = cfg.fft_size // 2
    duration = cfg.n_frames * hop / 16000.0
    report = benchmark_inference(model, seqs, tuple(args.workers), warmup=args.warmup,
                                 runs=args.runs, sequence_duration=duration, seed=args.seed)
    print(report.table())
    _emit_csv(args.csv, report.csv())
    return 0


COMMANDS = {
    "grid": cmd_grid,
    "simulate": cmd_simulate,
    "features": cmd_features,
    "train": cmd_train,
    "eval": cmd_eval,
    "localize": cmd_localize,
    "tramp": cmd_tramp,
    "bench": cmd_bench,
}


def run(argv=None) -> int:
    """Run one subcommand and return its exit code."""
    from .errors import FormatError

    parser = build_parser()
    try:
        args = _resolve(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())}
    log.info("resolved config: %s", json.dumps(resolved, sort_keys=True))
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"salad {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, ValueError, OSError, RuntimeError, KeyError) as exc:
        log.error("%s failed: %s", args.command, exc)
        print(f"salad {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
