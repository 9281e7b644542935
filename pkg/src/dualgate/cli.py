"""Command-line entry point: ``dualgate <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
from pathlib import Path
import sys

from .checkpoint import atomic_write_text, load_checkpoint, load_encoder_state
from .config import RunConfig, load_config, parse_config
from .data import ImageDataset, load_image_folder, make_synthetic, write_image_folder
from .encoder import Encoder
from .errors import DualGateError


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def encoder_from_checkpoint(path) -> tuple[Encoder, RunConfig]:
    ckpt = load_checkpoint(path)
    config = parse_config(ckpt.config_text)
    encoder = Encoder(config.encoder, config.sampler)
    load_encoder_state(encoder, ckpt.arrays)
    return encoder, config


def _datasets(config: RunConfig) -> tuple[ImageDataset, ImageDataset]:
    d = config.data
    train = load_image_folder(d.train_dir) if d.train_dir else make_synthetic(
        d.synth_train_n, config.encoder.input_size, d.num_classes, d.synth_seed)
    test = load_image_folder(d.test_dir) if d.test_dir else make_synthetic(
        d.synth_test_n, config.encoder.input_size, d.num_classes, d.synth_seed + 1)
    return train, test


def cmd_pretrain(args) -> int:
    from .evaluate import run_report
    from .train import pretrain

    config = load_config(args.config)
    train_set, test_set = _datasets(config)
    out = Path(args.out)

    def progress(row):
        if not args.quiet:
            print(f"epoch {row['epoch']:4d}  loss {row['loss_total']:.4f}  "
                  f"flops {row['flops_ratio']:.4f}  lr {row['lr']:.4f}  tau {row['tau']:.3f}",
                  file=sys.stderr, flush=True)

    result = pretrain(config, train_set, out_dir=out, resume=args.resume, on_epoch=progress)
    report = run_report(result.encoder, train_set, test_set, config.data.normalize_features,
                        t_d=config.train.t_d if config.train.mode != "dense" else None)
    last5 = result.metrics[-5:]
    report["train_flops_ratio_last5"] = sum(r["flops_ratio"] for r in last5) / len(last5)
    report["epochs"] = len(result.metrics)
    report["checkpoints"] = [Path(p).name for p in result.checkpoints]
    atomic_write_text(out / "report.json", _dump_json(report))
    return 0


def cmd_eval_knn(args) -> int:
    from .evaluate import extract_features, knn_top1

    encoder, _ = encoder_from_checkpoint(args.ckpt)
    normalize = not args.no_normalize
    bank = extract_features(encoder, args.path, load_image_folder(args.train_data), normalize)
    query = extract_features(encoder, args.path, load_image_folder(args.test_data), normalize)
    acc = knn_top1(bank, query, args.k)
    result = {"metric": "knn_top1", "k": args.k, "path": args.path, "normalized": normalize, "accuracy": acc}
    if args.out:
        atomic_write_text(args.out, _dump_json(result))
    print(f"{acc:.4f}")
    return 0


def cmd_eval_linear(args) -> int:
    from .evaluate import ProbeSchedule, extract_features, linear_probe

    encoder, _ = encoder_from_checkpoint(args.ckpt)
    bank = extract_features(encoder, args.path, load_image_folder(args.train_data), args.normalize)
    query = extract_features(encoder, args.path, load_image_folder(args.test_data), args.normalize)
    schedule = ProbeSchedule.toy() if args.toy else ProbeSchedule()
    acc = linear_probe(bank, query, schedule, repeats=args.repeats, seed=args.seed)
    result = {"metric": "linear_top1", "path": args.path, "repeats": args.repeats,
              "epochs": schedule.epochs, "accuracy": acc}
    if args.out:
        atomic_write_text(args.out, _dump_json(result))
    print(f"{acc:.4f}")
    return 0


def cmd_export_policy(args) -> int:
    from .evaluate import export_policy

    encoder, _ = encoder_from_checkpoint(args.ckpt)
    policy = export_policy(encoder, load_image_folder(args.probe_data), (args.always_on, args.off))
    atomic_write_text(args.out, _dump_json(policy))
    return 0


def cmd_export_features(args) -> int:
    from .evaluate import extract_features, save_features

    encoder, _ = encoder_from_checkpoint(args.ckpt)
    fs = extract_features(encoder, args.path, load_image_folder(args.data), not args.no_normalize)
    save_features(args.out, fs)
    return 0


def cmd_plot(args) -> int:
    from .plot import plot_metrics

    t_d = args.td
    snapshot = Path(args.metrics).with_name("config.cfg")
    if t_d is None and snapshot.exists():
        t_d = load_config(snapshot).train.t_d
    for path in plot_metrics(args.metrics, args.out, t_d):
        print(path)
    return 0


def cmd_synth(args) -> int:
    write_image_folder(make_synthetic(args.n, args.size, args.classes, args.seed), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualgate", description="Dual-path gated self-supervised training")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="run dual-path pre-training")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_pretrain)

    def eval_args(p):
        p.add_argument("--ckpt", required=True)
        p.add_argument("--train-data", required=True)
        p.add_argument("--test-data", required=True)
        p.add_argument("--path", choices=("dense", "gated"), default="gated")
        p.add_argument("--out", help="optional JSON result file")

    p = sub.add_parser("eval-knn", help="kNN top-1 on frozen features")
    eval_args(p)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--no-normalize", action="store_true")
    p.set_defaults(func=cmd_eval_knn)

    p = sub.add_parser("eval-linear", help="linear probe on frozen features")
    eval_args(p)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--toy", action="store_true", help="30-epoch schedule with decays at 18 and 24")
    p.add_argument("--normalize", action="store_true", help="l2-normalise features first")
    p.set_defaults(func=cmd_eval_linear)

    p = sub.add_parser("export-policy", help="per-channel gate activation histogram as JSON")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--probe-data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--always-on", type=float, default=0.99)
    p.add_argument("--off", type=float, default=0.01)
    p.set_defaults(func=cmd_export_policy)

    p = sub.add_parser("export-features", help="write frozen features as a flat binary file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--path", choices=("dense", "gated"), default="gated")
    p.add_argument("--out", required=True)
    p.add_argument("--no-normalize", action="store_true")
    p.set_defaults(func=cmd_export_features)

    p = sub.add_parser("plot", help="SVG charts of a metrics CSV")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--td", type=float, help="budget line on the FLOPs chart")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("synth", help="write the procedural 10-class dataset as an image folder")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DualGateError, OSError, ValueError) as exc:
        print(f"dualgate {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
