"""Command-line entry point: synth, augment, train, eval.

Flags mirror the library configs; an optional `--config file` supplies
flat `key = value` defaults that explicit flags override. Every command
writes into the --out directory and is deterministic for identical flags.

Exit codes: 0 success, 1 usage/config error, 2 runtime/data error.
"""

import argparse
import sys
from pathlib import Path

from . import plots
from .augment import AugmentationPolicy, expand_dataset
from .data import (LABELS_3CLASS, LABELS_4CLASS, generate_synthetic_dataset,
                   load_samples, read_manifest, save_tensor_file,
                   write_manifest, write_nifti, ManifestRow)
from .errors import ConfigError, FormatError, LabelError
from .metrics import evaluate
from .models import ARCHITECTURES, ModelConfig, build_model, load_checkpoint, parse_kv_text, save_checkpoint
from .training import TrainConfig, grouped_split, stratified_split, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _extents(text):
    try:
        return tuple(int(p) for p in str(text).replace("x", ",").split(",") if p.strip())
    except ValueError as exc:
        raise UsageError(f"bad extents {text!r}") from exc


def _pair(text):
    parts = str(text).split(",")
    if len(parts) != 2:
        raise UsageError(f"expected 'low,high', got {text!r}")
    return float(parts[0]), float(parts[1])


def _split_spec(text):
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 3:
        raise UsageError(f"expected three comma-separated sizes, got {text!r}")
    try:
        if all("." not in p for p in parts):
            return tuple(int(p) for p in parts)
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise UsageError(f"bad split spec {text!r}") from exc


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


# dest -> cast used both for flag values and config-file strings
_CASTS = {
    "seed": int, "workers": int, "out": str, "config": str,
    "per_class": int, "classes": int,
    "mri_shape": _extents, "fmri_shape": _extents,
    "manifest": str, "copies": int, "target_mri_shape": _extents,
    "rotation_max": float, "shift_max": int, "scale_range": _pair,
    "noise_sigma": float, "temporal_shift_max": int, "motion_prob": float,
    "arch": str, "epochs": int, "lr": float, "batch_size": int,
    "clip_norm": float, "dropout": float, "split": _split_spec,
    "split_before_augment": _bool,
    "checkpoint": str, "splits": str, "subset": str,
}

_DEFAULTS = {
    "seed": 0, "workers": 1, "classes": None,
    "mri_shape": None, "fmri_shape": None,
    "copies": 10, "target_mri_shape": (128, 128, 176),
    "rotation_max": 10.0, "shift_max": 8, "scale_range": (0.9, 1.1),
    "noise_sigma": 0.02, "temporal_shift_max": 3, "motion_prob": 0.2,
    "epochs": 20, "lr": 1e-5, "batch_size": 2, "clip_norm": None,
    "dropout": 0.1, "split": (0.7, 0.2, 0.1), "split_before_augment": True,
    "splits": None, "subset": None,
}

_REQUIRED = {
    "synth": ("out", "per_class"),
    "augment": ("out", "manifest"),
    "train": ("out", "manifest", "arch"),
    "eval": ("out", "manifest", "checkpoint"),
}


def build_parser():
    parser = _Parser(prog="neurofuse", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--config")
        p.add_argument("--workers", type=int)

    p = sub.add_parser("synth", help="generate a synthetic NIfTI dataset")
    common(p)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--mri-shape", dest="mri_shape", type=_extents)
    p.add_argument("--fmri-shape", dest="fmri_shape", type=_extents)

    p = sub.add_parser("augment", help="expand a dataset with augmented copies")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--copies", type=int)
    p.add_argument("--target-mri-shape", dest="target_mri_shape", type=_extents)
    p.add_argument("--rotation-max", dest="rotation_max", type=float)
    p.add_argument("--shift-max", dest="shift_max", type=int)
    p.add_argument("--scale-range", dest="scale_range", type=_pair)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--temporal-shift-max", dest="temporal_shift_max", type=int)
    p.add_argument("--motion-prob", dest="motion_prob", type=float)

    p = sub.add_parser("train", help="train an architecture on a manifest")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--arch", choices=ARCHITECTURES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--classes", type=int)
    p.add_argument("--mri-shape", dest="mri_shape", type=_extents)
    p.add_argument("--fmri-shape", dest="fmri_shape", type=_extents)
    p.add_argument("--split", type=_split_spec)
    p.add_argument("--split-before-augment", dest="split_before_augment",
                   action=argparse.BooleanOptionalAction)

    p = sub.add_parser("eval", help="evaluate a checkpoint and write reports")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--splits", help="splits.tsv written by train")
    p.add_argument("--subset", choices=("train", "val", "test", "all"))

    return parser


def _resolve(args):
    """Fill None values from the config file, then from builtin defaults."""
    kv = {}
    if args.config:
        text = Path(args.config).read_text(encoding="utf-8")
        kv = {k.replace("-", "_"): v for k, v in parse_kv_text(text).items()}
    for dest in vars(args):
        if getattr(args, dest) is not None or dest in ("command", "config"):
            continue
        if dest in kv:
            setattr(args, dest, _CASTS[dest](kv[dest]))
        elif dest in _DEFAULTS:
            setattr(args, dest, _DEFAULTS[dest])
    for dest in _REQUIRED[args.command]:
        if getattr(args, dest, None) is None:
            raise UsageError(f"--{dest.replace('_', '-')} is required")
    return args


def _class_names(num_classes):
    if num_classes == 3:
        return LABELS_3CLASS
    if num_classes == 4:
        return LABELS_4CLASS
    return tuple(str(k) for k in range(num_classes))


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args):
    if args.per_class < 1:
        raise UsageError(f"--per-class must be >= 1, got {args.per_class}")
    classes = args.classes if args.classes is not None else 3
    if classes not in (3, 4):
        raise UsageError("--classes must be 3 or 4 (the supported label sets)")
    out = _outdir(args)
    names = _class_names(classes)
    samples = generate_synthetic_dataset(
        args.per_class,
        mri_shape=args.mri_shape or (16, 16, 12),
        fmri_shape=args.fmri_shape or (6, 8, 8, 4),
        num_classes=classes, seed=args.seed)
    rows = []
    for s in samples:
        mri_name = f"{s.subject_id}_mri.nii"
        fmri_name = f"{s.subject_id}_fmri.nii"
        write_nifti(s.mri, out / mri_name)
        write_nifti(s.fmri, out / fmri_name)
        rows.append(ManifestRow(s.subject_id, mri_name, fmri_name, names[s.label]))
    write_manifest(rows, out / "manifest.tsv")
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_augment(args):
    out = _outdir(args)
    rows = read_manifest(args.manifest)
    label_text = {r.subject_id: r.label_text for r in rows}
    samples = load_samples(args.manifest)
    policy = AugmentationPolicy(
        target_mri_shape=args.target_mri_shape,
        rotation_max_degrees=args.rotation_max,
        shift_max_voxels=args.shift_max,
        intensity_scale_range=args.scale_range,
        noise_sigma=args.noise_sigma,
        temporal_shift_max_frames=args.temporal_shift_max,
        motion_artifact_probability=args.motion_prob,
        copies_per_subject=args.copies,
        seed=args.seed)
    expanded = expand_dataset(samples, policy, workers=args.workers)
    out_rows = []
    for sample, prov in zip(expanded.samples, expanded.provenance):
        mri_name = fmri_name = ""
        if sample.mri is not None:
            mri_name = f"{sample.subject_id}_mri.nft"
            save_tensor_file(sample.mri, out / mri_name)
        if sample.fmri is not None:
            fmri_name = f"{sample.subject_id}_fmri.nft"
            save_tensor_file(sample.fmri, out / fmri_name)
        out_rows.append(ManifestRow(sample.subject_id, mri_name, fmri_name,
                                    label_text[prov.source_subject], prov.source_subject))
    write_manifest(out_rows, out / "manifest.tsv")
    expanded.write_provenance(out / "provenance.tsv")
    print(f"wrote {len(out_rows)} samples to {out}")
    return 0


def _resolve_sizes(split, n):
    if all(isinstance(v, int) for v in split):
        return split
    if abs(sum(split) - 1.0) > 1e-6:
        raise UsageError(f"split fractions must sum to 1, got {split}")
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    return (n_train, n_val, n - n_train - n_val)


def cmd_train(args):
    out = _outdir(args)
    rows = read_manifest(args.manifest)
    samples = load_samples(args.manifest)
    labels = [s.label for s in samples]
    classes = args.classes if args.classes is not None else max(labels) + 1
    config = ModelConfig(
        architecture=args.arch,
        mri_shape=None, fmri_shape=None,  # filled below
        num_classes=classes,
        dropout_rate=args.dropout,
        seed=args.seed)
    mri_shape = fmri_shape = None
    if config.uses_mri:
        with_mri = [s for s in samples if s.mri is not None]
        if len(with_mri) != len(samples):
            raise ConfigError(f"{args.arch} needs MRI volumes for every sample")
        mri_shape = args.mri_shape or with_mri[0].mri.shape[:3]
    if config.uses_fmri:
        with_fmri = [s for s in samples if s.fmri is not None]
        if len(with_fmri) != len(samples):
            raise ConfigError(f"{args.arch} needs fMRI series for every sample")
        fmri_shape = args.fmri_shape or with_fmri[0].fmri.shape[:4]
    config = ModelConfig(args.arch, mri_shape, fmri_shape, classes, args.dropout, args.seed)
    for i, s in enumerate(samples):
        if config.uses_mri and s.mri.shape != config.mri_shape + (1,):
            raise ConfigError(f"sample {s.subject_id}: MRI shape {s.mri.shape} "
                              f"!= configured {config.mri_shape + (1,)}")
        if config.uses_fmri and s.fmri.shape != config.fmri_shape + (1,):
            raise ConfigError(f"sample {s.subject_id}: fMRI shape {s.fmri.shape} "
                              f"!= configured {config.fmri_shape + (1,)}")
        if not 0 <= s.label < classes:
            raise ConfigError(f"sample {s.subject_id}: label {s.label} out of range")

    sizes = _resolve_sizes(args.split, len(samples))
    groups = [r.group for r in rows]
    if args.split_before_augment and any(groups):
        tr, va, te = grouped_split(labels, groups, sizes, args.seed)
    else:
        tr, va, te = stratified_split(labels, sizes, args.seed)

    model = build_model(config)
    tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                     learning_rate=args.lr, gradient_clip_norm=args.clip_norm,
                     seed=args.seed)
    model, curve = train(model, [samples[i] for i in tr], [samples[i] for i in va], tc)

    save_checkpoint(model, out / "checkpoint.nfse")
    curve.write_csv(out / "curve.csv")
    plots.save_learning_curve_plot(curve, out / "curve.png")
    with open(out / "splits.tsv", "w", encoding="utf-8") as fh:
        fh.write("# sample_id\tsplit\n")
        for name, idx in (("train", tr), ("val", va), ("test", te)):
            for i in idx:
                fh.write(f"{samples[i].subject_id}\t{name}\n")
    final = curve.records[-1]
    print(f"trained {args.arch} for {tc.epochs} epochs: "
          f"train_acc={final.train_acc:.3f} val_acc={final.val_acc:.3f}")
    return 0


def _read_splits(path):
    assignment = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        sample_id, split = line.split("\t")
        assignment[sample_id] = split
    return assignment


def cmd_eval(args):
    out = _outdir(args)
    model = load_checkpoint(args.checkpoint)
    samples = load_samples(args.manifest)
    subset = args.subset or ("test" if args.splits else "all")
    if args.splits:
        assignment = _read_splits(args.splits)
        missing = [s.subject_id for s in samples if s.subject_id not in assignment]
        if missing:
            raise ConfigError(f"{len(missing)} samples missing from {args.splits}")
        if subset != "all":
            samples = [s for s in samples if assignment[s.subject_id] == subset]
    elif subset != "all":
        raise UsageError("--subset needs --splits")
    if not samples:
        raise ConfigError(f"no samples in subset {subset!r}")
    report = evaluate(model, samples, workers=args.workers)
    report.write_csvs(out)
    (out / "summary.txt").write_text(report.to_text(), encoding="utf-8")
    names = _class_names(model.config.num_classes)
    plots.save_roc_plot(report, out / "roc.png")
    plots.save_confusion_matrix_plot(report, out / "confusion_matrix.png", names)
    print(f"evaluated {int(report.cm.sum())} samples: accuracy={report.accuracy:.3f}")
    return 0


_COMMANDS = {"synth": cmd_synth, "augment": cmd_augment,
             "train": cmd_train, "eval": cmd_eval}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required (synth, augment, train, eval)")
        args = _resolve(args)
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LabelError, FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())
