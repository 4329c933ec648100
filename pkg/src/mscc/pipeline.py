"""End-to-end orchestration: manifest in, trained checkpoints, per-image
masks/overlays, and metrics out.

The full flow per test image: probability map from the pixel network,
binarize, dense-CRF cleanup, patch-classifier mask, buffer gating against
the dilated CRF mask, union fusion, overlay rendering, metric rows.
"""

from pathlib import Path

import numpy as np

from . import crf, fusion, imgio, metrics
from .checkpoint import load_checkpoint, save_checkpoint
from .data import augment_images, load_pair
from .netbuilder import build_patch_classifier
from .network import Network
from .patches import (augment_patches, balance, concat_sets, mesh_patches,
                      predict_patch_mask, save_patch_cache, train_patch_classifier)
from .train import (build_arch, patch_curves_csv, pixel_curves_csv,
                    predict_probability_map, train_pixel_model)


def _gather_pairs(manifest, split):
    return [(rec, load_pair(rec)) for _, rec in manifest.pairs(split=split)]


def train_pixel(manifest, arch, config, out_dir, log=None):
    """Train the chosen architecture; writes checkpoint + curves CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_pairs = augment_images([pair for _, pair in _gather_pairs(manifest, "train")])
    val_pairs = [pair for _, pair in _gather_pairs(manifest, "val")]
    net, curves = train_pixel_model(
        train_pairs, val_pairs, arch=arch, width_scale=config.width_scale,
        lr=config.pixel_lr, epochs=config.pixel_epochs,
        batch_size=config.pixel_batch, seed=config.seed, log=log)
    ckpt = out_dir / "pixel_checkpoint.mscc"
    save_checkpoint(ckpt, net.state_arrays(), meta={
        "kind": "pixel", "arch": arch, "width_scale": config.width_scale,
        "seed": config.seed})
    (out_dir / "pixel_curves.csv").write_text(pixel_curves_csv(curves))
    return ckpt, curves


def load_pixel_network(ckpt_path):
    arrays, meta = load_checkpoint(ckpt_path)
    if meta.get("kind") != "pixel":
        raise ValueError(f"{ckpt_path}: not a pixel checkpoint")
    spec = build_arch(meta["arch"], meta.get("width_scale", 1.0))
    net = Network(spec, seed=0)
    net.load_state_arrays(arrays)
    return net


def build_patch_sets(manifest, split, config):
    """Mesh + label every image of a split into one labeled patch set."""
    sets = []
    for rec, (img, gt) in _gather_pairs(manifest, split):
        sets.append(mesh_patches(img, gt, size=config.patch_size,
                                 image_id=rec.stem, criterion=config.criterion))
    if not sets:
        raise ValueError(f"no images in split {split!r}")
    return concat_sets(sets)


def prepare_balanced_training_set(manifest, config, cache_dir=None):
    """Label, augment the minority class, and balance the two classes.

    Mirrors the published recipe: the WithObject minority is augmented x8
    and sampled down to the WithoutObject count.
    """
    full = build_patch_sets(manifest, "train", config)
    if cache_dir is not None:
        save_patch_cache(Path(cache_dir) / "patches_train.cache", full)
    counts = full.class_counts()
    n_with = counts[1]
    n_without = counts[0]
    if n_with == 0 or n_without == 0:
        raise ValueError("training split has a single patch class; cannot balance")
    minority_label = 1 if n_with <= n_without else 0
    majority_count = max(n_with, n_without)
    minority = full.subset(np.flatnonzero(full.labels == minority_label))
    majority = full.subset(np.flatnonzero(full.labels != minority_label))
    augmented = augment_patches(minority)
    if len(augmented) < majority_count:
        # x8 still short of the majority: keep classes equal by trimming it
        majority = balance(majority, len(augmented), config.seed + 1)
        majority_count = len(augmented)
    sampled = balance(augmented, majority_count, config.seed)
    return concat_sets([majority, sampled])


def train_patch(manifest, config, out_dir, log=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    balanced = prepare_balanced_training_set(manifest, config, cache_dir=out_dir)
    net, curves = train_patch_classifier(
        balanced, epochs=config.patch_epochs, lr=config.patch_lr,
        seed=config.seed, batch_size=config.patch_batch, log=log)
    ckpt = out_dir / "patch_checkpoint.mscc"
    save_checkpoint(ckpt, net.state_arrays(), meta={
        "kind": "patch", "patch_size": config.patch_size, "seed": config.seed})
    (out_dir / "patch_curves.csv").write_text(patch_curves_csv(curves))
    return ckpt, curves


def load_patch_network(ckpt_path):
    arrays, meta = load_checkpoint(ckpt_path)
    if meta.get("kind") != "patch":
        raise ValueError(f"{ckpt_path}: not a patch checkpoint")
    net = Network(build_patch_classifier(meta.get("patch_size", 8)), seed=0)
    net.load_state_arrays(arrays)
    return net


def segment_image(img, pixel_net, patch_net, config):
    """All per-image pipeline stages; returns a dict of intermediates."""
    prob = predict_probability_map(pixel_net, img)
    binary = fusion.binarize(prob, config.threshold)
    feats = crf.PixelFeatures.from_image(img)
    unary = crf.unary_from_mask(binary, confidence=config.crf_confidence)
    q = crf.mean_field_infer(unary, feats, config.crf_params(),
                             method=config.crf_method)
    crf_mask = crf.map_labeling(q)
    patch_mask = predict_patch_mask(patch_net, img, size=config.patch_size)
    filtered = fusion.buffer_filter(patch_mask, crf_mask, config.buffer_radius)
    fused = fusion.combine(crf_mask, filtered)
    return {
        "prob": prob,
        "binary": binary,
        "crf_mask": crf_mask,
        "patch_mask": patch_mask,
        "filtered_patch_mask": filtered,
        "fused": fused,
    }


def infer_and_fuse(manifest, pixel_ckpt, patch_ckpt, config, out_dir,
                   split="test", log=None):
    """Run the full pipeline over a split; writes per-image artifacts and
    metric CSVs, returns the fused-mask metrics report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pixel_net = load_pixel_network(pixel_ckpt)
    patch_net = load_patch_network(patch_ckpt)
    fused_rows = []
    crf_rows = []
    for rec, (img, gt) in _gather_pairs(manifest, split):
        stage = segment_image(img, pixel_net, patch_net, config)
        stem = out_dir / rec.stem
        imgio.write_prob(f"{stem}_prob.pgm", stage["prob"])
        imgio.write_mask(f"{stem}_crf.pgm", stage["crf_mask"])
        imgio.write_mask(f"{stem}_patch.pgm", stage["patch_mask"])
        imgio.write_mask(f"{stem}_fused.pgm", stage["fused"])
        overlay = fusion.render_overlay(img, stage["crf_mask"], stage["filtered_patch_mask"], gt)
        imgio.write_png_rgb(f"{stem}_overlay.png", overlay)
        fused_rows.append((rec.stem, metrics.evaluate_pair(stage["fused"], gt)))
        crf_rows.append((rec.stem, metrics.evaluate_pair(stage["crf_mask"], gt)))
        if log:
            log(f"{rec.stem}: fused dice {fused_rows[-1][1]['dice']:.4f} "
                f"crf dice {crf_rows[-1][1]['dice']:.4f}")
    class_of = manifest.class_of_image()
    report = metrics.aggregate(fused_rows, class_of)
    crf_report = metrics.aggregate(crf_rows, class_of)
    (out_dir / "metrics_per_image.csv").write_text(metrics.per_image_csv(report))
    (out_dir / "metrics_per_class.csv").write_text(metrics.per_class_csv(report))
    (out_dir / "metrics_overall.csv").write_text(metrics.overall_csv(report))
    (out_dir / "metrics_crf_only.csv").write_text(metrics.overall_csv(crf_report))
    return report, crf_report


def evaluate_directory(pred_dir, manifest, split="test", suffix="_fused.pgm"):
    """Score saved masks against the manifest's ground truth."""
    pred_dir = Path(pred_dir)
    rows = []
    for _, rec in manifest.pairs(split=split):
        pred_path = pred_dir / f"{rec.stem}{suffix}"
        if not pred_path.exists():
            raise FileNotFoundError(f"missing prediction {pred_path}")
        pred = imgio.read_mask(pred_path)
        _, gt = load_pair(rec)
        rows.append((rec.stem, metrics.evaluate_pair(pred, gt)))
    return metrics.aggregate(rows, manifest.class_of_image())
