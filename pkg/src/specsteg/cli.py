"""Command-line front end.

Subcommands: make-dataset, train-window, extract-features, fuse-train,
evaluate. Exit codes: 0 success, 2 usage/configuration, 3 data or file
format, 4 capacity/embedding, 5 training divergence, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .codec import CodecConfig
from .errors import (AudioFormatError, CapacityError, CodecError, ManifestError,
                     ParityUnreachableError, SpecstegError, TrainingDivergenceError)
from .fusion import load_features
from .manifest import load_manifest
from .pipeline import (RunConfig, evaluate_fused, evaluate_window, extract_features,
                       format_report, fuse_train, make_dataset, train_window,
                       write_report)
from .svm import load_margin_model


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for name in ("epochs", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return replace(cfg, **overrides) if overrides else cfg


def _cmd_make_dataset(args) -> int:
    codec = CodecConfig(frame_len=args.frame_len, quant_step=args.quant_step,
                        seed=args.seed or 0)
    path = make_dataset(
        source_dir=args.source, out_dir=args.out,
        schemes=args.schemes.split(","), ebrs=[float(e) for e in args.ebrs.split(",")],
        codec=codec, seed=args.seed or 0, duration_s=args.duration,
        workers=args.workers,
    )
    print(f"manifest written: {path}")
    return 0


def _cmd_train_window(args) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    history_path = args.history or str(out) + ".history.json"
    history = train_window(manifest, args.window, cfg, out, history_path,
                           log=lambda rec: print(
                               f"epoch {rec['epoch']:3d}  loss {rec['loss']:.4f}  "
                               f"acc {rec['train_acc']:.4f}  lr {rec['lr']:.2e}"))
    print(f"checkpoint written: {out} ({len(history)} epochs)")
    return 0


def _cmd_extract_features(args) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(args.manifest)
    checkpoints = _checkpoint_map(args.checkpoints)
    n = extract_features(manifest, checkpoints, cfg, args.out, subset=args.subset,
                         csv_path=args.csv)
    print(f"{n} feature rows written: {args.out}")
    return 0


def _cmd_fuse_train(args) -> int:
    cfg = _load_config(args)
    vectors, labels, sizes = load_features(args.features)
    fuse_train(vectors, labels, sizes, c_value=args.c if args.c is not None else cfg.svm_c,
               model_path=args.out)
    print(f"margin model written: {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(args.manifest)
    if args.model:
        checkpoints = _checkpoint_map(args.checkpoints)
        model = load_margin_model(args.model)
        report = evaluate_fused(manifest, model, checkpoints, cfg, subset=args.subset)
    elif args.checkpoint:
        report = evaluate_window(manifest, args.checkpoint, cfg, subset=args.subset,
                                 threshold=args.threshold)
    else:
        raise ManifestError("evaluate needs --model (+ --checkpoints) or --checkpoint")
    sys.stdout.write(format_report(report))
    if args.out:
        write_report(report, args.out)
        print(f"report written: {args.out}.txt/.json")
    return 0


def _checkpoint_map(spec: str) -> dict:
    """Parse "512=path/a.ckpt,256=path/b.ckpt,..." into {window: path}."""
    mapping = {}
    for part in spec.split(","):
        if "=" not in part:
            raise ManifestError(f"bad checkpoint mapping {part!r} (want N=path)")
        key, value = part.split("=", 1)
        mapping[int(key)] = value
    return mapping


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specsteg",
                                     description="spectrogram-domain steganalysis pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", help="generate cover/stego corpus from source WAVs")
    p.add_argument("--source", required=True, help="directory of source .wav files")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--schemes", default="sign", help="comma list: lsb_esc,min,sign,parity")
    p.add_argument("--ebrs", default="1.0", help="comma list of embedding rates")
    p.add_argument("--duration", type=float, default=2.0, help="segment length in seconds")
    p.add_argument("--frame-len", type=int, default=512, dest="frame_len")
    p.add_argument("--quant-step", type=float, default=0.005, dest="quant_step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_make_dataset)

    p = sub.add_parser("train-window", help="train one per-window model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--window", type=int, required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--history", default=None, help="history JSON path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="RunConfig JSON file")
    p.set_defaults(func=_cmd_train_window)

    p = sub.add_parser("extract-features", help="fuse per-window features to a file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoints", required=True, help="N=path,N=path,N=path")
    p.add_argument("--out", required=True)
    p.add_argument("--subset", default="all", choices=("train", "test", "all"))
    p.add_argument("--csv", default=None, help="optional CSV export path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_extract_features)

    p = sub.add_parser("fuse-train", help="train the fused margin classifier")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--c", type=float, default=None, help="soft-margin penalty")
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_fuse_train)

    p = sub.add_parser("evaluate", help="report TNR/TPR/ACC over a manifest subset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", default=None, help="margin model path (fused mode)")
    p.add_argument("--checkpoints", default=None, help="N=path map (fused mode)")
    p.add_argument("--checkpoint", default=None, help="single checkpoint (window mode)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--subset", default="test", choices=("train", "test", "all"))
    p.add_argument("--out", default=None, help="report path prefix")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_evaluate)
    return parser


_EXIT_CODES = [
    ((AudioFormatError, CodecError, ManifestError), 3),
    ((CapacityError, ParityUnreachableError), 4),
    ((TrainingDivergenceError,), 5),
]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SpecstegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for types, code in _EXIT_CODES:
            if isinstance(exc, types):
                return code
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
