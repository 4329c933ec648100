"""Dataset plumbing: ingest/normalize on-disk datasets, 1:1:2 splitting,
x8 image augmentation, and a seeded synthetic shape dataset that stands in
for microscopy data at desk scale.

On-disk layout (ingest input and synth output):

    root/<class name>/images/<stem>.png
    root/<class name>/gt/<stem>.png

The manifest is JSON next to the normalized data; paths are stored
relative to the manifest's directory.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imgio
from .patches import dihedral_variants

SPLITS = ("train", "val", "test")


@dataclass
class PairRecord:
    stem: str
    image_path: Path
    gt_path: Path
    split: str | None = None

    @property
    def image_id(self):
        return self.stem


@dataclass
class DatasetManifest:
    root: Path
    classes: dict       # class name -> list[PairRecord]
    seed: int = 0
    image_size: int | None = None

    def pairs(self, split=None, class_name=None):
        out = []
        for cname in sorted(self.classes):
            if class_name is not None and cname != class_name:
                continue
            for rec in self.classes[cname]:
                if split is None or rec.split == split:
                    out.append((cname, rec))
        return out

    def class_of_image(self):
        return {rec.stem: cname for cname, recs in self.classes.items() for rec in recs}


def save_manifest(manifest, path):
    path = Path(path)
    base = path.parent
    doc = {
        "seed": manifest.seed,
        "image_size": manifest.image_size,
        "classes": {
            cname: [
                {
                    "stem": rec.stem,
                    "image": str(rec.image_path.relative_to(base)),
                    "gt": str(rec.gt_path.relative_to(base)),
                    "split": rec.split,
                }
                for rec in recs
            ]
            for cname, recs in sorted(manifest.classes.items())
        },
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_manifest(path):
    path = Path(path)
    doc = json.loads(path.read_text())
    base = path.parent
    classes = {
        cname: [
            PairRecord(
                stem=e["stem"],
                image_path=base / e["image"],
                gt_path=base / e["gt"],
                split=e["split"],
            )
            for e in entries
        ]
        for cname, entries in doc["classes"].items()
    }
    return DatasetManifest(root=base, classes=classes, seed=doc.get("seed", 0),
                           image_size=doc.get("image_size"))


class IngestError(Exception):
    """Carries an itemized list of dataset problems."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__(
            "dataset ingest failed:\n" + "\n".join(f"  - {p}" for p in self.problems))


def ingest(root, out_dir, image_size=256):
    """Normalize a raw dataset into out_dir and return its manifest.

    Images become image_size x image_size grayscale (bilinear, luminance);
    ground truth resizes nearest-neighbor and is re-binarized at 0.5.
    """
    root = Path(root)
    out_dir = Path(out_dir)
    problems = []
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir()) if root.is_dir() else []
    if not class_dirs:
        raise IngestError([f"no class directories under {root}"])
    classes = {}
    for cdir in class_dirs:
        img_dir = cdir / "images"
        gt_dir = cdir / "gt"
        if not img_dir.is_dir():
            problems.append(f"{cdir.name}: missing images/ directory")
            continue
        if not gt_dir.is_dir():
            problems.append(f"{cdir.name}: missing gt/ directory")
            continue
        images = {p.stem: p for p in sorted(img_dir.iterdir())
                  if p.suffix.lower() in (".png", ".pgm")}
        gts = {p.stem: p for p in sorted(gt_dir.iterdir())
               if p.suffix.lower() in (".png", ".pgm")}
        for stem in sorted(set(gts) - set(images)):
            problems.append(f"{cdir.name}/{stem}: ground truth without an image")
        recs = []
        for stem, ipath in sorted(images.items()):
            if stem not in gts:
                problems.append(f"{cdir.name}/{stem}: missing ground truth")
                continue
            try:
                img = imgio.to_grayscale(imgio.load_image(ipath))
                gt_raw = imgio.load_image(gts[stem])
            except Exception as exc:
                problems.append(f"{cdir.name}/{stem}: unreadable ({exc})")
                continue
            img = imgio.resize_bilinear(img, image_size)
            gt = imgio.to_grayscale(gt_raw) if gt_raw.ndim == 3 else gt_raw
            gt = imgio.resize_nearest_binary((gt >= 0.5).astype(np.uint8), image_size)
            cls_out = out_dir / cdir.name
            (cls_out / "images").mkdir(parents=True, exist_ok=True)
            (cls_out / "gt").mkdir(parents=True, exist_ok=True)
            img_out = cls_out / "images" / f"{stem}.png"
            gt_out = cls_out / "gt" / f"{stem}.png"
            imgio.write_png_gray(img_out, img)
            imgio.write_png_gray(gt_out, gt.astype(np.float64))
            recs.append(PairRecord(stem=f"{cdir.name}__{stem}",
                                   image_path=img_out, gt_path=gt_out))
        if recs:
            classes[cdir.name] = recs
    if problems:
        raise IngestError(problems)
    return DatasetManifest(root=out_dir, classes=classes, image_size=image_size)


def split_1_1_2(manifest, seed):
    """Assign train/val/test per class at a 1:1:2 ratio.

    Per class: seeded shuffle, then ceil(n/4) train, ceil(n/4) val (capped
    so at least one test image remains), remainder test.
    """
    rng = np.random.default_rng(seed)
    for cname in sorted(manifest.classes):
        recs = manifest.classes[cname]
        n = len(recs)
        if n < 4:
            raise ValueError(f"class {cname!r} has {n} images; need at least 4 to split")
        order = rng.permutation(n)
        n_train = math.ceil(n / 4)
        n_val = min(math.ceil(n / 4), n - n_train - 1)
        for pos, idx in enumerate(order):
            if pos < n_train:
                recs[idx].split = "train"
            elif pos < n_train + n_val:
                recs[idx].split = "val"
            else:
                recs[idx].split = "test"
    manifest.seed = seed
    return manifest


def load_pair(rec):
    img = imgio.load_image(rec.image_path)
    img = imgio.to_grayscale(img) if img.ndim == 3 else img
    gt_img = imgio.load_image(rec.gt_path)
    gt_img = imgio.to_grayscale(gt_img) if gt_img.ndim == 3 else gt_img
    gt = (gt_img >= 0.5).astype(np.uint8)
    return img, gt


def augment_pair(img, gt):
    """The 8 dihedral variants of an (image, gt) pair, transformed together."""
    return list(zip(dihedral_variants(img), dihedral_variants(gt)))


def augment_images(pairs):
    """x8 the training pairs; input is a list of (image, gt) arrays."""
    out = []
    for img, gt in pairs:
        out.extend(augment_pair(img, gt))
    return out


# ---------------------------------------------------------------------------
# synthetic shape dataset

SHAPE_FAMILIES = ("ellipse", "blob", "filament")


def _gaussian_blur(img, sigma):
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-xs * xs / (2.0 * sigma * sigma))
    k /= k.sum()
    padded = np.pad(img, ((radius, radius), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for i, w in enumerate(k):
        out += w * padded[i:i + img.shape[0], :]
    padded = np.pad(out, ((0, 0), (radius, radius)), mode="edge")
    out = np.zeros_like(img)
    for i, w in enumerate(k):
        out += w * padded[:, i:i + img.shape[1]]
    return out


def _draw_ellipse(size, rng):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(0.3, 0.7, size=2) * size
    a = rng.uniform(0.14, 0.34) * size
    b = rng.uniform(0.14, 0.34) * size
    theta = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.uint8)


def _draw_blob(size, rng):
    mask = np.zeros((size, size), dtype=np.uint8)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(0.35, 0.65, size=2) * size
    for _ in range(int(rng.integers(2, 5))):
        oy = cy + rng.uniform(-0.12, 0.12) * size
        ox = cx + rng.uniform(-0.12, 0.12) * size
        r = rng.uniform(0.1, 0.22) * size
        mask |= ((yy - oy) ** 2 + (xx - ox) ** 2 <= r * r).astype(np.uint8)
    return mask


def _draw_filament(size, rng):
    mask = np.zeros((size, size), dtype=np.uint8)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    y = rng.uniform(0.25, 0.75) * size
    x = rng.uniform(0.05, 0.2) * size
    angle = rng.uniform(-0.5, 0.5)
    width = rng.uniform(0.05, 0.09) * size
    steps = int(rng.integers(5, 9))
    seg = size * 0.14
    for _ in range(steps):
        ny = y + seg * np.sin(angle)
        nx = x + seg * np.cos(angle)
        for t in np.linspace(0.0, 1.0, 8):
            py, px = y + t * (ny - y), x + t * (nx - x)
            mask |= ((yy - py) ** 2 + (xx - px) ** 2 <= width * width).astype(np.uint8)
        y, x = ny, nx
        angle += rng.uniform(-0.5, 0.5)
        if not (0.05 * size < y < 0.95 * size and x < 0.95 * size):
            break
    return mask


_DRAWERS = {"ellipse": _draw_ellipse, "blob": _draw_blob, "filament": _draw_filament}


def synth_pair(family, size, rng, area_lo=0.05, area_hi=0.60):
    """One (image, gt) pair; geometry is rejection-sampled into the
    configured object-area band."""
    draw = _DRAWERS[family]
    for _ in range(200):
        gt = draw(size, rng)
        frac = gt.mean()
        if area_lo <= frac <= area_hi:
            break
    else:
        raise RuntimeError(f"could not sample a {family} in the area band")
    bg = rng.uniform(0.10, 0.25)
    fg = rng.uniform(0.65, 0.90)
    img = bg + (fg - bg) * gt.astype(np.float64)
    img = _gaussian_blur(img, rng.uniform(0.5, 1.0))
    img += rng.normal(0.0, rng.uniform(0.01, 0.04), size=img.shape)
    return np.clip(img, 0.0, 1.0), gt


def synth_dataset(out_dir, n_classes=3, per_class=20, size=64, seed=0,
                  area_lo=0.05, area_hi=0.60):
    """Write a deterministic synthetic dataset; returns its manifest."""
    if size % 16 or size % 8:
        raise ValueError(f"size must be divisible by 16 and the patch size, got {size}")
    out_dir = Path(out_dir)
    classes = {}
    for ci in range(n_classes):
        family = SHAPE_FAMILIES[ci % len(SHAPE_FAMILIES)]
        cname = family if ci < len(SHAPE_FAMILIES) else f"{family}{ci // len(SHAPE_FAMILIES) + 1}"
        cls_out = out_dir / cname
        (cls_out / "images").mkdir(parents=True, exist_ok=True)
        (cls_out / "gt").mkdir(parents=True, exist_ok=True)
        recs = []
        for ii in range(per_class):
            rng = np.random.default_rng(np.random.SeedSequence((seed, ci, ii)))
            img, gt = synth_pair(family, size, rng, area_lo, area_hi)
            stem = f"{cname}_{ii:03d}"
            img_path = cls_out / "images" / f"{stem}.png"
            gt_path = cls_out / "gt" / f"{stem}.png"
            imgio.write_png_gray(img_path, img)
            imgio.write_png_gray(gt_path, gt.astype(np.float64))
            recs.append(PairRecord(stem=stem, image_path=img_path, gt_path=gt_path))
        classes[cname] = recs
    return DatasetManifest(root=out_dir, classes=classes, seed=seed, image_size=size)
