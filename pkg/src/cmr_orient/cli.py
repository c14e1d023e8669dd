"""``cmr-orient`` command line.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 training failure.
The seed comes from ``--seed``, then ``$ORIENT_SEED``, then 42.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, orientation
from .errors import DataError, TrainingError
from .inference import predict_volume, recognize_and_standardize, score, transform
from .manifest import MODALITIES, DatasetManifest, load_manifest, save_manifest
from .model import load_checkpoint, predict_proba, save_checkpoint
from .nifti import read_nifti, write_nifti
from .phantom import PhantomConfig, generate_dataset
from .preprocess import AugmentConfig
from .training import (
    FINETUNE_EPOCHS,
    FINETUNE_LR,
    TrainConfig,
    expand_orientations,
    finetune,
    load_slices,
    split_patients,
    stack_inputs,
    train,
)

log = logging.getLogger("cmr_orient")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3
DEFAULT_SEED = 42


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _globals(default: bool) -> argparse.ArgumentParser:
    # Defined on the root parser with real defaults and on every subcommand
    # with SUPPRESS, so the flags work on either side of the command name.
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: v) if default else (lambda v: argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=d(None), help="random seed (default: $ORIENT_SEED or 42)")
    p.add_argument("--quiet", action="store_true", default=d(False), help="only print warnings and results")
    p.add_argument("--json", action="store_true", default=d(False), help="machine-readable output on stdout")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cmr-orient", description="Orientation recognition and standardisation for CMR volumes.",
                     parents=[_globals(True)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = [_globals(False)]

    p = sub.add_parser("gen-phantoms", parents=common, help="write synthetic phantom volumes and a manifest")
    p.add_argument("--modality", choices=MODALITIES, default="bssfp")
    p.add_argument("--patients", type=int, default=45)
    p.add_argument("--slices", type=int, default=8)
    p.add_argument("--size", type=int, nargs=2, default=(96, 96), metavar=("SX", "SY"))
    p.add_argument("--noise", type=float, default=0.03)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_gen_phantoms)

    p = sub.add_parser("train", parents=common, help="train a classifier from scratch")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=1e-3)
    _train_flags(p, "model.ornt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", parents=common, help="adapt a trained classifier to another modality")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--epochs", type=int, default=FINETUNE_EPOCHS)
    p.add_argument("--freeze-epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=FINETUNE_LR)
    _train_flags(p, "finetuned.ornt")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("predict", parents=common, help="predict the orientation of one volume")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--input", required=True, type=Path)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("standardize", parents=common, help="predict and undo the orientation of one volume")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--output", required=True, type=Path)
    p.set_defaults(func=cmd_standardize)

    p = sub.add_parser("transform", parents=common, help="apply an orientation label to a volume (no model)")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--label", required=True, type=int, choices=range(orientation.NUM_ORIENTATIONS), metavar="{0..7}")
    p.add_argument("--output", required=True, type=Path)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("eval", parents=common, help="slice and volume accuracy on a manifest")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--no-expand", action="store_true", help="score records with their stored labels instead of expanding x8")
    p.set_defaults(func=cmd_eval)
    return parser


def _train_flags(p, default_out):
    p.add_argument("--out", type=Path, default=Path(default_out))
    p.add_argument("--history", type=Path, help="history JSON (default: <out>.history.json)")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--val-ratio", type=float, default=0.2)
    p.add_argument("--workers", type=int, default=1, help="preprocessing threads; results do not depend on it")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--no-bn-refresh", action="store_true",
                   help="keep only the in-training moving averages for batch-norm statistics")
    p.add_argument("--split-dir", type=Path, help="also write the canonical train/val manifests here")


def resolve_seed(flag) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("ORIENT_SEED")
    if env is None or env == "":
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"ORIENT_SEED must be an integer, got {env!r}") from None


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(text)


# -- commands ------------------------------------------------------------------


def cmd_gen_phantoms(args) -> int:
    config = PhantomConfig(
        num_patients=args.patients,
        slices_per_volume=args.slices,
        size=tuple(args.size),
        modality=args.modality,
        noise_sigma=args.noise,
        seed=args.seed,
    )
    manifest = generate_dataset(config, args.out)
    path = args.out / "manifest.jsonl"
    _emit(args, {"manifest": str(path), "n_volumes": len(manifest)}, str(path))
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch_size,
            lr=args.lr,
            seed=args.seed,
            augment=AugmentConfig(enabled=not args.no_augment),
            val_ratio=args.val_ratio,
            workers=args.workers,
            bn_refresh=not args.no_bn_refresh,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _split(args, config: TrainConfig):
    manifest = load_manifest(args.manifest)
    train_set, val_set = split_patients(manifest, config.val_ratio, config.seed)
    if args.split_dir:
        args.split_dir.mkdir(parents=True, exist_ok=True)
        save_manifest(train_set, args.split_dir / "train.jsonl")
        save_manifest(val_set, args.split_dir / "val.jsonl")
    return expand_orientations(train_set), expand_orientations(val_set)


def _epoch_logger(args):
    def _log(stats):
        log.info(
            "epoch %d [%s] loss %.4f train_acc %.4f val_acc %.4f val_vol_acc %.4f",
            stats.epoch, stats.stage, stats.train_loss, stats.train_accuracy,
            stats.val_accuracy, stats.val_volume_accuracy,
        )
    return _log


def _finish_training(args, params, history) -> int:
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, args.out)
    history_path = args.history or args.out.with_name(args.out.name + ".history.json")
    history_path.write_text(history.to_json() + "\n")
    last = history.to_list()[-1]
    _emit(
        args,
        {"checkpoint": str(args.out), "history": str(history_path), "final": last},
        f"saved {args.out} (val_acc {last['val_accuracy']:.4f}, val_vol_acc {last['val_volume_accuracy']:.4f})",
    )
    return EXIT_OK


def cmd_train(args) -> int:
    config = _train_config(args)
    train_set, val_set = _split(args, config)
    params, history = train(train_set, val_set, config, log=_epoch_logger(args))
    return _finish_training(args, params, history)


def cmd_finetune(args) -> int:
    config = _train_config(args)
    if not 0 <= args.freeze_epochs <= config.epochs:
        raise UsageError(f"--freeze-epochs must be between 0 and --epochs ({config.epochs})")
    params = load_checkpoint(args.model)
    train_set, val_set = _split(args, config)
    params, history = finetune(params, train_set, val_set, config, args.freeze_epochs, log=_epoch_logger(args))
    return _finish_training(args, params, history)


def cmd_predict(args) -> int:
    params = load_checkpoint(args.model)
    pred = predict_volume(params, read_nifti(args.input))
    text = f"{pred.voted_label} ({orientation.NAMES[pred.voted_label]}), margin {pred.vote_margin:.3f}"
    _emit(args, pred.to_dict(), text)
    return EXIT_OK


def cmd_standardize(args) -> int:
    params = load_checkpoint(args.model)
    volume = read_nifti(args.input)
    fixed, pred = recognize_and_standardize(params, volume)
    write_nifti(fixed, args.output)
    # printed rather than logged so --quiet cannot hide it
    print(f"warning: {args.output}: voxel order corrected; qform/sform copied unmodified and may no longer match",
          file=sys.stderr)
    payload = {"predicted": pred.to_dict(), "applied": orientation.inverse(pred.voted_label), "output": str(args.output)}
    _emit(args, payload, f"predicted {pred.voted_label}, wrote {args.output}")
    return EXIT_OK


def cmd_transform(args) -> int:
    write_nifti(transform(read_nifti(args.input), args.label), args.output)
    _emit(args, {"label": args.label, "output": str(args.output)}, str(args.output))
    return EXIT_OK


def evaluate(params, manifest: DatasetManifest, expand: bool = True) -> dict:
    """Overall and per-modality accuracy; the volume id is the record index."""
    if expand:
        manifest = expand_orientations(manifest)
    report = None
    per_modality = {}
    for modality in [m for m in MODALITIES if any(r.modality == m for r in manifest)] + [None]:
        part = DatasetManifest([r for r in manifest if modality is None or r.modality == modality])
        slices = load_slices(part)
        probs = predict_proba(params, stack_inputs(slices, params.config.input_size))
        r = score(probs, slices.labels, slices.volume_ids).to_dict()
        if modality is None:
            report = r
        else:
            per_modality[modality] = r
    report["per_modality"] = per_modality
    return report


def cmd_eval(args) -> int:
    params = load_checkpoint(args.model)
    manifest = load_manifest(args.manifest)
    if not len(manifest):
        raise DataError(f"{args.manifest}: manifest is empty")
    report = evaluate(params, manifest, expand=not args.no_expand)
    lines = [f"slice_acc {report['slice_acc']:.4f} ({report['n_slices']} slices)",
             f"volume_acc {report['volume_acc']:.4f} ({report['n_volumes']} volumes)"]
    lines += [f"  {m}: slice {r['slice_acc']:.4f} volume {r['volume_acc']:.4f}" for m, r in report["per_modality"].items()]
    _emit(args, report, "\n".join(lines))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        args.seed = resolve_seed(args.seed)
        return args.func(args)
    except UsageError as exc:
        print(f"cmr-orient: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"cmr-orient: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"cmr-orient: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
