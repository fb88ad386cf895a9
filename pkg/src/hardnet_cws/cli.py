"""Command-line entry point: ``hardnet-cws <subcommand> ...``.

Settings resolve as command-line flags > ``--config`` JSON file > built-in defaults.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import plotting
from .checkpoint import CheckpointError, load_checkpoint
from .colour import CHANNEL_MODES, EyConfig, derive_ey, load_rgb, merge_channels, plane_absdiff, save_plane
from .data import SPLITS, DatasetManifest, ManifestEntry, load_manifest, load_mask, save_manifest, save_mask, synth_dataset
from .encoder import builtin_schedule, load_schedule
from .metrics import THRESHOLD, evaluate_set, write_summary_csv
from .model import ModelConfig
from .reliability import (DegenerateRatingsError, anova_two_way, icc_agreement, icc_consistency, improvement_table,
                          load_ratings_csv, rating_distribution)
from .training import FLIP_GROUP, DEFAULT_FLIPS, TrainConfig, pseudo_label, train, tta_infer

log = logging.getLogger("hardnet_cws")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class CliError(Exception):
    pass


def _deterministic():
    torch.use_deterministic_algorithms(True, warn_only=True)


def _band(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"band must be comma-separated integers, got {text!r}") from None


def _add_colour(p):
    p.add_argument("--channels", choices=CHANNEL_MODES, default="RGB+eY", help="colour channel mode")
    p.add_argument("--exponent", type=int, default=5, help="eY exponent")
    p.add_argument("--swap-rb", action="store_true", help="swap the R and B luminance weights before eY")


def _add_models(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint", nargs="+", help="one or more checkpoint archives")
    g.add_argument("--ensemble", help="directory whose *.ckpt files form a fold ensemble")
    p.add_argument("--tta", action="store_true", help="average over horizontal and vertical flips")
    p.add_argument("--flip-group", action="store_true", help="with --tta, also use the combined HV flip")
    p.add_argument("--use-ema", action="store_true", help="predict with the EMA weights")
    p.add_argument("--channels", choices=CHANNEL_MODES, help="expected channel mode; error if a checkpoint differs")
    p.add_argument("--threshold", type=float, default=THRESHOLD)


def _add_inputs(p):
    p.add_argument("--manifest", help="manifest JSON supplying the images")
    p.add_argument("--split", choices=SPLITS, help="restrict the manifest to one split")
    p.add_argument("--images", help="directory of images (alternative to --manifest)")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="hardnet-cws", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["merge"] = sub.add_parser("merge", help="build merged colour tensors and plane images")
    p.add_argument("images", nargs="+")
    p.add_argument("--out", required=True)
    _add_colour(p)

    p = subs["synth"] = sub.add_parser("synth", help="write a synthetic wound dataset")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--empty-fraction", type=float, default=0.2)
    p.add_argument("--split", choices=SPLITS, default="train")
    p.add_argument("--source", default="wound")
    p.add_argument("--out", required=True)

    p = subs["train"] = sub.add_parser("train", help="cross-validated training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs-budget", choices=("small", "full"), default="full")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--ema-decay", type=float)
    p.add_argument("--freeze", default="none", help="'none', 'stem' or 'stem+blockK'")
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schedule", default="cws", help="'cws', 'dfus' or a schedule JSON file")
    p.add_argument("--no-augment", action="store_true")
    _add_colour(p)

    p = subs["infer"] = sub.add_parser("infer", help="predict masks")
    _add_models(p)
    _add_inputs(p)
    p.add_argument("--out", required=True)
    p.add_argument("--save-prob", action="store_true", help="also write probability maps as .npy")

    p = subs["pseudo-label"] = sub.add_parser("pseudo-label", help="label unlabelled images with a trained model")
    _add_models(p)
    _add_inputs(p)
    p.add_argument("--source", default="meat", help="source tag for the new entries")
    p.add_argument("--include-labelled", action="store_true",
                   help="also copy the manifest's labelled train/val entries into the new manifest")
    p.add_argument("--out", required=True)

    p = subs["eval"] = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--gt", help="directory of ground-truth masks")
    p.add_argument("--manifest", help="manifest supplying ground-truth masks")
    p.add_argument("--split", choices=SPLITS)
    p.add_argument("--pred", required=True, help="directory of predicted masks named <image id>.png")
    p.add_argument("--out", required=True, help="summary CSV path")

    p = subs["icc"] = sub.add_parser("icc", help="inter-rater reliability")
    p.add_argument("--ratings", required=True, help="CSV with image_id,rater_id,rating")
    p.add_argument("--strict-scale", action="store_true", help="reject ratings outside 1-5")
    p.add_argument("--out", help="report CSV path")

    p = subs["dist"] = sub.add_parser("dist", help="rating distribution report")
    p.add_argument("--ratings", required=True)
    p.add_argument("--baseline", help="ratings of the baseline model; adds an improvement column")
    p.add_argument("--band", type=_band, default=None, help="star band, e.g. 4,5 (default 4,5; 5 with --baseline)")
    p.add_argument("--names", default="DFUS,CWS", help="baseline,proposed column names")
    p.add_argument("--out", required=True)

    for p in subs.values():
        p.add_argument("--config", help="JSON file of option defaults (flags still win)")
    return parser, subs


def parse(argv=None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sp = subs[args.command]
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            parser.error(f"cannot read config {args.config}: {e}")
        if not isinstance(cfg, dict):
            parser.error(f"config {args.config} must hold a JSON object")
        known = {a.dest for a in sp._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - known - {"config"})
        if unknown:
            parser.error(f"config {args.config}: unknown options for '{args.command}': {', '.join(unknown)}")
        sp.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


# -- helpers -----------------------------------------------------------------

def _image_list(args) -> list[tuple[str, Path]]:
    if args.manifest and args.images:
        raise CliError("use either --manifest or --images, not both")
    if args.manifest:
        m = load_manifest(args.manifest)
        entries = m.entries if args.split is None else m.select(splits={args.split})
        out = [(e.id, m.resolve(e.image)) for e in entries]
    elif args.images:
        root = Path(args.images)
        if not root.is_dir():
            raise CliError(f"image directory not found: {root}")
        out = [(p.stem, p) for p in sorted(root.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES]
    else:
        raise CliError("give --manifest or --images")
    if not out:
        raise CliError("no input images selected")
    ids = [i for i, _ in out]
    if len(set(ids)) != len(ids):
        raise CliError("input image ids (file stems) are not unique")
    return out


def _models(args):
    if args.ensemble:
        paths = sorted(Path(args.ensemble).glob("*.ckpt"))
        if not paths:
            raise CliError(f"no *.ckpt files in {args.ensemble}")
    else:
        paths = [Path(p) for p in args.checkpoint]
    models = []
    for p in paths:
        ckpt = load_checkpoint(p)
        if args.channels:
            ckpt.require_mode(args.channels)
        models.append(ckpt.build(use_ema=args.use_ema))
    return models


def _flips(args):
    if not args.tta:
        return ("id",)
    return FLIP_GROUP if args.flip_group else DEFAULT_FLIPS


def _write_csv(path, rows: list[dict]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})


# -- subcommands -------------------------------------------------------------

def cmd_merge(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = EyConfig(args.exponent, args.swap_rb)
    for path in args.images:
        img = load_rgb(path)
        stem = Path(path).stem
        merged = merge_channels(img, args.channels, cfg)
        np.save(out / f"{stem}.npy", merged.data)
        planes = {tag: merged.data[i] * 255.0 for i, tag in enumerate(merged.channels) if i >= 3}
        if args.swap_rb:
            planes["eY-diff"] = plane_absdiff(derive_ey(img, EyConfig(args.exponent, False)),
                                                 derive_ey(img, cfg))
        for tag, plane in planes.items():
            save_plane(plane, out / f"{stem}_{tag}.png")
        plotting.plot_planes(img, planes, out / f"{stem}_planes.png")
        print(f"{stem}: {'+'.join(merged.channels)} {merged.data.shape}")
    return 0


def cmd_synth(args):
    m = synth_dataset(args.n, args.size, args.seed, args.out, args.empty_fraction, split=args.split,
                      source=args.source)
    print(f"wrote {len(m.entries)} samples to {args.out}: {m.split_counts()}")
    return 0


def _schedule(name):
    if name in ("cws", "dfus"):
        return builtin_schedule(name)
    return load_schedule(name)


def cmd_train(args):
    _deterministic()
    manifest = load_manifest(args.manifest)
    print(f"manifest split counts: {manifest.split_counts()}")
    model_cfg = ModelConfig(channel_mode=args.channels, ey=EyConfig(args.exponent, args.swap_rb),
                            schedule=_schedule(args.schedule), seed=args.seed)
    overrides = dict(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, max_steps=args.max_steps,
                     ema_decay=args.ema_decay, seed=args.seed, folds=args.folds)
    if args.no_augment:
        from .augment import AugmentConfig
        overrides["augment"] = AugmentConfig.off()
    cfg = TrainConfig.preset(args.epochs_budget, **overrides)
    init = load_checkpoint(args.init) if args.init else None
    if init is not None:
        init.require_mode(args.channels)
    results = train(manifest, cfg, model_cfg, init=init, freeze=args.freeze, out_dir=args.out)
    rows = [dict(fold=r.fold, **h) for r in results for h in r.history]
    hist = Path(args.out) / "history.csv"
    _write_csv(hist, rows)
    for r in results:
        plotting.plot_history(r.history, plotting.figure_path(hist, f"fold{r.fold}"), f"fold {r.fold}")
        best = r.history[r.best_epoch - 1]
        print(f"fold {r.fold}: best epoch {r.best_epoch} val IoU {best['iou']:.4f} DSC {best['dsc']:.4f} -> {r.path}")
    return 0


def cmd_infer(args):
    _deterministic()
    models = _models(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    flips = _flips(args)
    for image_id, path in _image_list(args):
        prob = tta_infer(models, load_rgb(path), flips)
        save_mask(prob >= args.threshold, out / f"{image_id}.png")
        if args.save_prob:
            np.save(out / f"{image_id}.npy", prob.astype(np.float32))
    print(f"wrote predictions to {out} ({len(models)} model(s), flips {','.join(flips)})")
    return 0


def cmd_pseudo_label(args):
    _deterministic()
    models = _models(args)
    images = [(i, load_rgb(p)) for i, p in _image_list(args)]
    _, entries = pseudo_label(models, images, args.threshold, _flips(args), args.out, args.source)
    if args.include_labelled:
        if not args.manifest:
            raise CliError("--include-labelled needs --manifest")
        src = load_manifest(args.manifest)
        for e in src.select(splits={"train", "val"}, labelled=True):
            entries.append(ManifestEntry(str(src.resolve(e.image).resolve()), str(src.resolve(e.mask).resolve()),
                                         e.split, e.source))
    save_manifest(DatasetManifest(entries, Path(args.out)), Path(args.out) / "manifest.json")
    print(f"pseudo-labelled {len(images)} images into {args.out}")
    return 0


def cmd_eval(args):
    pred_dir = Path(args.pred)
    if bool(args.gt) == bool(args.manifest):
        raise CliError("give exactly one of --gt or --manifest")
    if args.manifest:
        m = load_manifest(args.manifest)
        entries = m.select(splits={args.split} if args.split else None, labelled=True)
        gts = [(e.id, m.resolve(e.mask)) for e in entries]
    else:
        gts = [(p.stem, p) for p in sorted(Path(args.gt).glob("*.png"))]
    if not gts:
        raise CliError("no ground-truth masks found")
    pairs, ids = [], []
    for image_id, gt_path in gts:
        pred_path = pred_dir / f"{image_id}.png"
        if not pred_path.is_file():
            raise CliError(f"missing prediction for {image_id}: {pred_path}")
        pairs.append((load_mask(gt_path), load_mask(pred_path)))
        ids.append(image_id)
    summary = evaluate_set(pairs, ids)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_summary_csv(summary, out)
    plotting.plot_metrics(summary, plotting.figure_path(out, "metrics"))
    fne = "undefined" if summary.fne is None else f"{summary.fne:.4f}"
    print(f"IoU {summary.iou:.4f} DSC {summary.dsc:.4f} FPE {summary.fpe:.4f} FNE {fne} "
          f"(FNE skipped {summary.fne_skipped}, blank-mask audit {len(summary.blank_mask_audit)})")
    return 0


def cmd_icc(args):
    r = load_ratings_csv(args.ratings)
    if args.strict_scale:
        r.check_scale()
    complete = r.complete()
    dropped = len(r.subjects) - len(complete.subjects)
    table = anova_two_way(complete)
    rows = []
    for res in (icc_consistency(table), icc_agreement(table)):
        rows.append({"kind": res.kind, "icc": res.value, "band": res.band, "lb95": res.lower, "ub95": res.upper,
                     "n": table.n, "k": table.k})
        print(f"{res.kind}: {res.value:.4f} ({res.band}) 95% CI [{res.lower:.4f}, {res.upper:.4f}]")
    if dropped:
        print(f"listwise deletion removed {dropped} subject(s) with declined ratings")
    if args.out:
        _write_csv(args.out, rows)
    return 0


def cmd_dist(args):
    proposed = load_ratings_csv(args.ratings)
    names = tuple(args.names.split(","))
    if len(names) != 2:
        raise CliError("--names needs exactly two comma-separated names")
    if args.baseline:
        band = args.band or (5,)
        rows = improvement_table(load_ratings_csv(args.baseline), proposed, band, names)
        if not rows:
            raise CliError("baseline and proposed ratings share no raters")
        keys = [k for k in rows[0] if k not in ("Rater", "Improvement %")]
    else:
        band = args.band or (4, 5)
        d = rating_distribution(proposed, band)
        key = f"{names[1]} {d['band']}"
        rows = [{"Rater": rater, key: pct} for rater, pct in d["per_rater"].items()]
        keys = [key]
        for (a, b), c in d["pairs"].items():
            print(f"{a} vs {b}: n={c['n']} exact={c['exact']} off-by-one={c['off_by_one']} larger={c['larger']}")
    _write_csv(args.out, rows)
    plotting.plot_rating_bars(rows, plotting.figure_path(args.out, "bars"), keys)
    for r in rows:
        print(", ".join(f"{k}: {v:.2f}" if isinstance(v, float) else f"{k}: {v}" for k, v in r.items()))
    return 0


COMMANDS = {
    "merge": cmd_merge,
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "pseudo-label": cmd_pseudo_label,
    "eval": cmd_eval,
    "icc": cmd_icc,
    "dist": cmd_dist,
}


def main(argv=None) -> int:
    args = parse(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CliError, CheckpointError, DegenerateRatingsError, ValueError, OSError, RuntimeError) as e:
        print(f"hardnet-cws {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
