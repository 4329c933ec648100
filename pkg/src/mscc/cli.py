"""Command-line frontend.

Subcommands: synth, ingest, split, augment, train-pixel, train-patch, crf,
fuse, sweep-buffer, infer, evaluate, render, params. Every command is a
deterministic function of its inputs, config, and seed; the seed comes
from --seed, then the config file, then MSCC_SEED, then 0.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import crf, fusion, imgio, metrics
from .config import load_config
from .data import (DatasetManifest, augment_pair, ingest, load_manifest,
                   load_pair, save_manifest, split_1_1_2, synth_dataset)
from .netbuilder import count_parameters, from_text, to_text
from .pipeline import evaluate_directory, infer_and_fuse, train_patch, train_pixel
from .train import ARCH_NAMES, build_arch


def _echo(msg):
    print(msg, flush=True)


def _add_config_args(p):
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--seed", type=int, help="random seed (overrides config and MSCC_SEED)")


def _config_from(args, **overrides):
    return load_config(getattr(args, "config", None), overrides=overrides,
                       flag_seed=getattr(args, "seed", None))


def cmd_synth(args):
    cfg = _config_from(args)
    manifest = synth_dataset(args.out, n_classes=args.classes,
                             per_class=args.per_class, size=args.size,
                             seed=cfg.seed, area_lo=cfg.synth_area_lo,
                             area_hi=cfg.synth_area_hi)
    save_manifest(manifest, Path(args.out) / "manifest.json")
    n = sum(len(v) for v in manifest.classes.values())
    _echo(f"wrote {n} image/gt pairs in {len(manifest.classes)} classes to {args.out}")


def cmd_ingest(args):
    cfg = _config_from(args, image_size=args.size)
    manifest = ingest(args.root, args.out, image_size=cfg.image_size)
    save_manifest(manifest, Path(args.out) / "manifest.json")
    n = sum(len(v) for v in manifest.classes.values())
    _echo(f"normalized {n} pairs into {args.out}")


def cmd_split(args):
    cfg = _config_from(args)
    manifest = load_manifest(args.manifest)
    split_1_1_2(manifest, cfg.seed)
    save_manifest(manifest, args.manifest)
    counts = {s: len(manifest.pairs(split=s)) for s in ("train", "val", "test")}
    _echo(f"split assigned: {counts}")


def cmd_augment(args):
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    written = 0
    for cname, rec in manifest.pairs(split="train"):
        img, gt = load_pair(rec)
        cls_out = out / cname
        (cls_out / "images").mkdir(parents=True, exist_ok=True)
        (cls_out / "gt").mkdir(parents=True, exist_ok=True)
        for k, (vimg, vgt) in enumerate(augment_pair(img, gt)):
            imgio.write_png_gray(cls_out / "images" / f"{rec.stem}_d{k}.png", vimg)
            imgio.write_png_gray(cls_out / "gt" / f"{rec.stem}_d{k}.png",
                                 vgt.astype(np.float64))
            written += 1
    _echo(f"wrote {written} augmented training pairs to {out}")


def cmd_train_pixel(args):
    cfg = _config_from(args, pixel_epochs=args.epochs, width_scale=args.width_scale)
    manifest = load_manifest(args.manifest)
    ckpt, curves = train_pixel(manifest, args.arch, cfg, args.out, log=_echo)
    _echo(f"checkpoint: {ckpt}; final train loss {curves[-1][1]:.4f}")


def cmd_train_patch(args):
    cfg = _config_from(args, patch_epochs=args.epochs)
    manifest = load_manifest(args.manifest)
    ckpt, curves = train_patch(manifest, cfg, args.out, log=_echo)
    _echo(f"checkpoint: {ckpt}; final loss {curves[-1][1]:.4f} acc {curves[-1][2]:.4f}")


def cmd_crf(args):
    cfg = _config_from(args, crf_w1=args.w1, crf_w2=args.w2,
                       crf_sigma_alpha=args.sa, crf_sigma_beta=args.sb,
                       crf_sigma_gamma=args.sg, crf_iterations=args.iters,
                       crf_confidence=args.confidence)
    img = imgio.load_image(args.image)
    img = imgio.to_grayscale(img) if img.ndim == 3 else img
    feats = crf.PixelFeatures.from_image(img)
    params = cfg.crf_params()
    if args.prob:
        unary = crf.unary_from_probabilities(imgio.read_prob(args.prob))
    else:
        unary = crf.unary_from_mask(imgio.read_mask(args.mask),
                                    confidence=cfg.crf_confidence)
    if args.energy_csv:
        q = crf.mean_field_infer(unary, feats,
                                 crf.CrfParams(**{**params.__dict__, "num_iterations": 0}),
                                 method=cfg.crf_method)
        lines = ["iteration,energy"]
        lines.append(f"0,{crf.energy(crf.map_labeling(q).ravel(), unary, feats, params):.6f}")
        kmat = crf.kernel_matrix(feats, params)
        for it in range(1, params.num_iterations + 1):
            q = crf.mean_field_step(q, unary, feats, params, kernel_mat=kmat)
            e = crf.energy(crf.map_labeling(q).ravel(), unary, feats, params)
            lines.append(f"{it},{e:.6f}")
        Path(args.energy_csv).write_text("\n".join(lines) + "\n")
    else:
        q = crf.mean_field_infer(unary, feats, params, method=cfg.crf_method)
    imgio.write_mask(args.out, crf.map_labeling(q))
    _echo(f"wrote MAP mask to {args.out}")


def cmd_fuse(args):
    cfg = _config_from(args, buffer_radius=args.radius)
    pixel = imgio.read_mask(args.pixel)
    patch = imgio.read_mask(args.patch)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.sweep:
        if not args.gt:
            raise SystemExit("--sweep needs --gt")
        gt = imgio.read_mask(args.gt)
        rows = fusion.sweep_buffer(patch, pixel, gt, radii=cfg.sweep_radii())
        (out_dir / "sweep.csv").write_text(fusion.sweep_csv(rows))
        radius = fusion.select_buffer(rows)
        _echo(f"sweep written to {out_dir / 'sweep.csv'}; selected radius {radius}")
    else:
        radius = cfg.buffer_radius
    fused = fusion.fuse(pixel, patch, radius)
    imgio.write_mask(out_dir / "fused.pgm", fused)
    if args.image:
        img = imgio.load_image(args.image)
        img = imgio.to_grayscale(img) if img.ndim == 3 else img
        gt = imgio.read_mask(args.gt) if args.gt else None
        overlay = fusion.render_overlay(
            img, pixel, fusion.buffer_filter(patch, pixel, radius), gt)
        imgio.write_png_rgb(out_dir / "overlay.png", overlay)
    _echo(f"fused mask written to {out_dir / 'fused.pgm'} (radius {radius})")


def cmd_sweep_buffer(args):
    cfg = _config_from(args)
    pixel = imgio.read_mask(args.pixel)
    patch = imgio.read_mask(args.patch)
    gt = imgio.read_mask(args.gt)
    rows = fusion.sweep_buffer(patch, pixel, gt, radii=cfg.sweep_radii())
    Path(args.out).write_text(fusion.sweep_csv(rows))
    _echo(f"selected radius: {fusion.select_buffer(rows)}")


def cmd_infer(args):
    cfg = _config_from(args, buffer_radius=args.radius)
    manifest = load_manifest(args.manifest)
    report, crf_report = infer_and_fuse(manifest, args.pixel_ckpt, args.patch_ckpt,
                                        cfg, args.out, split=args.split, log=_echo)
    _echo("overall fused: " + " ".join(
        f"{m}={report.overall[m]:.4f}" for m in metrics.METRIC_NAMES))
    _echo("overall crf-only: " + " ".join(
        f"{m}={crf_report.overall[m]:.4f}" for m in metrics.METRIC_NAMES))


def cmd_evaluate(args):
    manifest = load_manifest(args.manifest)
    report = evaluate_directory(args.pred_dir, manifest, split=args.split,
                                suffix=args.suffix)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics_per_image.csv").write_text(metrics.per_image_csv(report))
    (out_dir / "metrics_per_class.csv").write_text(metrics.per_class_csv(report))
    (out_dir / "metrics_overall.csv").write_text(metrics.overall_csv(report))
    _echo("overall: " + " ".join(
        f"{m}={report.overall[m]:.4f}" for m in metrics.METRIC_NAMES))


def cmd_render(args):
    img = imgio.load_image(args.image)
    img = imgio.to_grayscale(img) if img.ndim == 3 else img
    pixel = imgio.read_mask(args.pixel)
    patch = imgio.read_mask(args.patch)
    gt = imgio.read_mask(args.gt) if args.gt else None
    imgio.write_png_rgb(args.out, fusion.render_overlay(img, pixel, patch, gt))
    _echo(f"overlay written to {args.out}")


def cmd_params(args):
    if args.spec:
        spec = from_text(Path(args.spec).read_text())
    else:
        spec = build_arch(args.arch, args.width_scale)
    input_hw = (args.input_size, args.input_size) if args.input_size else None
    counts = count_parameters(spec, input_hw)
    lines = ["layer,kind,params"]
    for name, kind, n in counts.rows:
        lines.append(f"{name},{kind},{n}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.save_spec:
        Path(args.save_spec).write_text(to_text(spec))
    _echo(f"total {counts.total} (trainable {counts.trainable}, "
          f"non-trainable {counts.non_trainable})")


def build_parser():
    ap = argparse.ArgumentParser(prog="mscc",
                                 description="multiscale CNN-CRF segmentation pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic shape dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    _add_config_args(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="normalize a raw dataset")
    p.add_argument("--root", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--size", type=int, default=None)
    _add_config_args(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="assign 1:1:2 train/val/test splits")
    p.add_argument("--manifest", required=True, type=Path)
    _add_config_args(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("augment", help="write the x8 augmented training pairs")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_config_args(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train-pixel", help="train a pixel-level network")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--arch", choices=ARCH_NAMES, default="b3")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--width-scale", type=float, default=None)
    _add_config_args(p)
    p.set_defaults(func=cmd_train_pixel)

    p = sub.add_parser("train-patch", help="train the patch classifier")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--epochs", type=int, default=None)
    _add_config_args(p)
    p.set_defaults(func=cmd_train_patch)

    p = sub.add_parser("crf", help="dense-CRF cleanup of a probability map or mask")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--prob", type=Path, help="16-bit PGM probability map")
    src.add_argument("--mask", type=Path, help="8-bit PGM binary mask")
    p.add_argument("--image", required=True, type=Path, help="source grayscale image")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--energy-csv", type=Path)
    p.add_argument("--w1", type=float, default=None)
    p.add_argument("--w2", type=float, default=None)
    p.add_argument("--sa", type=float, default=None)
    p.add_argument("--sb", type=float, default=None)
    p.add_argument("--sg", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--confidence", type=float, default=None)
    _add_config_args(p)
    p.set_defaults(func=cmd_crf)

    p = sub.add_parser("fuse", help="buffer-gate and combine pixel + patch masks")
    p.add_argument("--pixel", required=True, type=Path)
    p.add_argument("--patch", required=True, type=Path)
    p.add_argument("--gt", type=Path)
    p.add_argument("--image", type=Path, help="render an overlay as well")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--radius", type=int, default=None)
    p.add_argument("--sweep", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("sweep-buffer", help="metrics over the buffer radius grid")
    p.add_argument("--pixel", required=True, type=Path)
    p.add_argument("--patch", required=True, type=Path)
    p.add_argument("--gt", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_config_args(p)
    p.set_defaults(func=cmd_sweep_buffer)

    p = sub.add_parser("infer", help="full pipeline over a split")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--pixel-ckpt", required=True, type=Path)
    p.add_argument("--patch-ckpt", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--split", default="test")
    p.add_argument("--radius", type=int, default=None)
    _add_config_args(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score saved masks against ground truth")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--pred-dir", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--split", default="test")
    p.add_argument("--suffix", default="_fused.pgm")
    _add_config_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="colored overlay of masks on an image")
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--pixel", required=True, type=Path)
    p.add_argument("--patch", required=True, type=Path)
    p.add_argument("--gt", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("params", help="per-layer parameter counts as CSV")
    p.add_argument("--arch", choices=ARCH_NAMES, default="b3")
    p.add_argument("--spec", type=Path, help="read a serialized network spec instead")
    p.add_argument("--width-scale", type=float, default=1.0)
    p.add_argument("--input-size", type=int, default=None,
                   help="needed for dense layers (patch classifier specs)")
    p.add_argument("--out", type=Path)
    p.add_argument("--save-spec", type=Path, help="also write the spec serialization")
    p.set_defaults(func=cmd_params)

    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
