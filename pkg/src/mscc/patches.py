"""Patch-level pass: meshing images into non-overlapping square patches,
half-area labeling, dihedral x8 augmentation, class balancing, the compact
patch classifier, and coarse mask reconstruction.

A labeled patch is WithObject iff its object fraction strictly exceeds the
criterion (default 0.5: strictly more than half the patch). The eight
augmentation variants are the four rotations and their horizontal mirrors,
in the fixed order r0, r90, r180, r270, m, m+r90, m+r180, m+r270.
"""

import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import autodiff as ad
from .netbuilder import build_patch_classifier
from .network import Network

PATCH_CACHE_MAGIC = b"MSCCP1\x00"


class PatchLabel(IntEnum):
    WITHOUT_OBJECT = 0
    WITH_OBJECT = 1


@dataclass
class PatchSet:
    """Column-wise patch records; ``labels`` is None for unlabeled data."""

    pixels: np.ndarray            # (n, size, size) float64 in [0,1]
    image_ids: list
    rows: np.ndarray              # (n,) grid row of each patch
    cols: np.ndarray              # (n,) grid col
    labels: np.ndarray | None = None
    criterion: float = 0.5

    def __len__(self):
        return self.pixels.shape[0]

    @property
    def size(self):
        return self.pixels.shape[1]

    def class_counts(self):
        if self.labels is None:
            raise ValueError("patch set is unlabeled")
        with_obj = int(np.count_nonzero(self.labels == PatchLabel.WITH_OBJECT))
        return {PatchLabel.WITH_OBJECT: with_obj,
                PatchLabel.WITHOUT_OBJECT: len(self) - with_obj}

    def subset(self, index):
        return PatchSet(
            pixels=self.pixels[index],
            image_ids=[self.image_ids[i] for i in np.atleast_1d(index)],
            rows=self.rows[index],
            cols=self.cols[index],
            labels=None if self.labels is None else self.labels[index],
            criterion=self.criterion)


def concat_sets(sets):
    if not sets:
        raise ValueError("nothing to concatenate")
    labeled = sets[0].labels is not None
    return PatchSet(
        pixels=np.concatenate([s.pixels for s in sets]),
        image_ids=[i for s in sets for i in s.image_ids],
        rows=np.concatenate([s.rows for s in sets]),
        cols=np.concatenate([s.cols for s in sets]),
        labels=np.concatenate([s.labels for s in sets]) if labeled else None,
        criterion=sets[0].criterion)


def assign_label(gt_patch, criterion=0.5):
    """WithObject iff object fraction > criterion (strictly)."""
    g = np.asarray(gt_patch)
    if not np.isin(g, (0, 1)).all():
        raise ValueError("ground-truth patch must be binary (0/1)")
    frac = g.mean()
    return PatchLabel.WITH_OBJECT if frac > criterion else PatchLabel.WITHOUT_OBJECT


def mesh_patches(image, gt=None, size=8, image_id="", criterion=0.5):
    """Tile an image into non-overlapping size x size patches, row-major.

    With a ground-truth mask, every patch gets a half-area label.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    if h % size:
        raise ValueError(f"image height {h} is not divisible by patch size {size}")
    if w % size:
        raise ValueError(f"image width {w} is not divisible by patch size {size}")
    gh, gw = h // size, w // size
    tiles = img.reshape(gh, size, gw, size).transpose(0, 2, 1, 3).reshape(-1, size, size)
    rows, cols = np.divmod(np.arange(gh * gw), gw)
    labels = None
    if gt is not None:
        g = np.asarray(gt)
        if g.shape != img.shape:
            raise ValueError(f"gt shape {g.shape} does not match image {img.shape}")
        if not np.isin(g, (0, 1)).all():
            raise ValueError("ground-truth mask must be binary (0/1)")
        gtiles = g.reshape(gh, size, gw, size).transpose(0, 2, 1, 3).reshape(-1, size, size)
        fracs = gtiles.mean(axis=(1, 2))
        labels = np.where(fracs > criterion,
                          int(PatchLabel.WITH_OBJECT),
                          int(PatchLabel.WITHOUT_OBJECT)).astype(np.int64)
    return PatchSet(
        pixels=np.ascontiguousarray(tiles),
        image_ids=[image_id] * (gh * gw),
        rows=rows.astype(np.int64),
        cols=cols.astype(np.int64),
        labels=labels,
        criterion=criterion)


def dihedral_variants(block):
    """The 8 variants of a 2-d block: 4 rotations, then their mirrors."""
    out = []
    for mirrored in (False, True):
        base = np.fliplr(block) if mirrored else block
        for r in range(4):
            out.append(np.ascontiguousarray(np.rot90(base, r)))
    return out


def augment_patches(patch_set):
    """Exactly 8 variants per patch, labels copied; duplicates permitted."""
    if patch_set.labels is None:
        raise ValueError("augmentation needs a labeled patch set")
    n = len(patch_set)
    out = np.empty((8 * n,) + patch_set.pixels.shape[1:])
    for i in range(n):
        for k, v in enumerate(dihedral_variants(patch_set.pixels[i])):
            out[8 * i + k] = v
    return PatchSet(
        pixels=out,
        image_ids=[patch_set.image_ids[i] for i in range(n) for _ in range(8)],
        rows=np.repeat(patch_set.rows, 8),
        cols=np.repeat(patch_set.cols, 8),
        labels=np.repeat(patch_set.labels, 8),
        criterion=patch_set.criterion)


def balance(minority, majority_count, seed):
    """Seeded uniform sample without replacement down/up to the target."""
    if len(minority) < majority_count:
        raise ValueError(
            f"cannot draw {majority_count} patches from a pool of {len(minority)}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(minority), size=majority_count, replace=False)
    return minority.subset(np.sort(chosen))


def reconstruct_mask(labels, height, width, size=8):
    """Paint each WithObject grid cell as a white size x size block."""
    lab = np.asarray(labels)
    gh, gw = height // size, width // size
    if gh * size != height or gw * size != width:
        raise ValueError(f"{height}x{width} is not a multiple of patch size {size}")
    if lab.shape != (gh, gw):
        raise ValueError(f"label grid must be {gh}x{gw}, got {lab.shape}")
    return np.kron((lab == PatchLabel.WITH_OBJECT).astype(np.uint8),
                   np.ones((size, size), dtype=np.uint8))


# ---------------------------------------------------------------------------
# classifier

def _one_hot(labels):
    out = np.zeros((labels.size, 2))
    out[np.arange(labels.size), labels] = 1.0
    return out


def train_patch_classifier(balanced, epochs=15, lr=1.0e-4, seed=0, batch_size=32,
                           log=None):
    """Train the compact classifier on a balanced labeled patch set.

    Returns (network, curve rows); each row is (epoch, mean loss, accuracy).
    """
    if balanced.labels is None:
        raise ValueError("training needs labels")
    counts = balanced.class_counts()
    if min(counts.values()) == 0:
        raise ValueError("training needs both patch classes present")
    spec = build_patch_classifier(patch_size=balanced.size)
    net = Network(spec, seed=seed)
    state = ad.AdamState(lr=lr)
    x_all = balanced.pixels[:, None, :, :]
    y_all = _one_hot(balanced.labels)
    rng = np.random.default_rng(seed)
    curves = []
    n = len(balanced)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for lo in range(0, n, batch_size):
            sel = order[lo:lo + batch_size]
            out, wrappers = net.forward(x_all[sel], mode="train")
            loss = ad.cce_loss(out, y_all[sel])
            if not np.isfinite(loss.data):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch {lo // batch_size}")
            loss.backward()
            grads = {k: w.grad for k, w in wrappers.items() if w.grad is not None}
            ad.adam_step(net.params, grads, state)
            total_loss += float(loss.data) * sel.size
            correct += int((out.data.argmax(axis=1) == balanced.labels[sel]).sum())
        row = (epoch, total_loss / n, correct / n)
        curves.append(row)
        if log:
            log(f"patch epoch {epoch}/{epochs}: loss {row[1]:.4f} acc {row[2]:.4f}")
    return net, curves


def classify_patches(net, patch_set, batch_size=256):
    """WithObject/WithoutObject predictions, argmax of the softmax head."""
    preds = np.empty(len(patch_set), dtype=np.int64)
    x_all = patch_set.pixels[:, None, :, :]
    for lo in range(0, len(patch_set), batch_size):
        out = net.predict(x_all[lo:lo + batch_size])
        preds[lo:lo + out.shape[0]] = out.argmax(axis=1)
    return preds


def predict_patch_mask(net, image, size=8):
    """Mesh, classify, reconstruct: the coarse patch-level mask of an image."""
    ps = mesh_patches(image, size=size)
    preds = classify_patches(net, ps)
    gh = image.shape[0] // size
    gw = image.shape[1] // size
    return reconstruct_mask(preds.reshape(gh, gw), image.shape[0], image.shape[1], size)


# ---------------------------------------------------------------------------
# on-disk cache (one file per split)

def save_patch_cache(path, patch_set):
    """Record block (image_id, row, col, label) plus a raw pixel blob."""
    if patch_set.labels is None:
        raise ValueError("cache stores labeled patches")
    with open(path, "wb") as fh:
        fh.write(PATCH_CACHE_MAGIC)
        fh.write(struct.pack("<IIf", len(patch_set), patch_set.size, patch_set.criterion))
        for i in range(len(patch_set)):
            ident = patch_set.image_ids[i].encode("utf-8")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<HHB", patch_set.rows[i], patch_set.cols[i],
                                 int(patch_set.labels[i])))
        fh.write(patch_set.pixels.astype("<f8").tobytes())


def load_patch_cache(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(PATCH_CACHE_MAGIC):
        raise ValueError(f"{path}: not a patch cache file")
    off = len(PATCH_CACHE_MAGIC)
    n, size, criterion = struct.unpack_from("<IIf", blob, off)
    off += struct.calcsize("<IIf")
    ids, rows, cols, labels = [], [], [], []
    for _ in range(n):
        ln = struct.unpack_from("<H", blob, off)[0]
        off += 2
        ids.append(blob[off:off + ln].decode("utf-8"))
        off += ln
        r, c, l = struct.unpack_from("<HHB", blob, off)
        off += struct.calcsize("<HHB")
        rows.append(r)
        cols.append(c)
        labels.append(l)
    pixels = np.frombuffer(blob, dtype="<f8", count=n * size * size,
                           offset=off).reshape(n, size, size).copy()
    return PatchSet(pixels=pixels, image_ids=ids,
                    rows=np.array(rows, dtype=np.int64),
                    cols=np.array(cols, dtype=np.int64),
                    labels=np.array(labels, dtype=np.int64),
                    criterion=float(criterion))
