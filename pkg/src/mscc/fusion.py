"""Pixel/patch fusion: binarization, dilation buffers, buffer gating,
mask union, the buffer-size sweep, and the colored overlay renderer.

The buffer is a Chebyshev (square structuring element) dilation of the
pixel-level mask, so radii compose additively and the even-step sweep grid
is exact. Gating is binary: patch-mask foreground outside the buffer is
erased, inside it is kept.
"""

import numpy as np

from . import kernels
from .metrics import METRIC_NAMES, evaluate_pair

SWEEP_RADII = tuple(range(2, 41, 2))

# overlay palette (RGB)
COLOR_PIXEL_ONLY = (255, 0, 0)      # red
COLOR_PATCH_ONLY = (0, 255, 0)      # fluorescent green
COLOR_OVERLAP = (255, 255, 0)       # yellow
COLOR_GT_OUTLINE = (128, 0, 128)    # purple


def _as_mask(name, m):
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be binary (0/1)")
    return np.ascontiguousarray(arr.astype(np.uint8))


def binarize(prob, threshold=0.5):
    """Foreground where p >= threshold (the boundary maps to foreground)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0,1), got {threshold}")
    p = np.asarray(prob, dtype=np.float64)
    return (p >= threshold).astype(np.uint8)


def dilate(mask, radius):
    """Set a pixel wherever some foreground pixel lies within Chebyshev
    distance ``radius`` (square structuring element of side 2r+1)."""
    if radius < 0 or int(radius) != radius:
        raise ValueError(f"radius must be a nonnegative integer, got {radius}")
    m = _as_mask("mask", mask)
    return kernels.dilate_chebyshev(m, int(radius))


def buffer_filter(patch_mask, pixel_mask, radius):
    """Keep patch-mask foreground only inside the dilated pixel mask."""
    p = _as_mask("patch_mask", patch_mask)
    x = _as_mask("pixel_mask", pixel_mask)
    if p.shape != x.shape:
        raise ValueError(f"mask size mismatch: {p.shape} vs {x.shape}")
    return (p & dilate(x, radius)).astype(np.uint8)


def combine(pixel_mask, filtered_patch_mask):
    """Pixelwise OR of the two masks."""
    a = _as_mask("pixel_mask", pixel_mask)
    b = _as_mask("patch_mask", filtered_patch_mask)
    if a.shape != b.shape:
        raise ValueError(f"mask size mismatch: {a.shape} vs {b.shape}")
    return (a | b).astype(np.uint8)


def fuse(pixel_mask, patch_mask, radius):
    """combine(pixel, buffer_filter(patch, pixel, radius))."""
    return combine(pixel_mask, buffer_filter(patch_mask, pixel_mask, radius))


def sweep_buffer(patch_mask, pixel_mask, gt, radii=SWEEP_RADII):
    """Score the fused mask against GT for every buffer radius.

    Returns a list of rows: {"radius": r, metric: value, ...}.
    """
    g = _as_mask("gt", gt)
    rows = []
    for r in radii:
        fused = fuse(pixel_mask, patch_mask, r)
        vals = evaluate_pair(fused, g)
        row = {"radius": int(r)}
        row.update(vals)
        rows.append(row)
    return rows


def sweep_csv(rows):
    lines = ["radius," + ",".join(METRIC_NAMES)]
    for row in rows:
        lines.append(str(row["radius"]) + "," +
                     ",".join(f"{row[m]:.4f}" for m in METRIC_NAMES))
    return "\n".join(lines) + "\n"


def select_buffer(rows):
    """Radius where the Recall and Accuracy curves cross.

    Picks the first grid point whose sign of (Recall - Accuracy) differs
    from the previous point (or hits zero); with no crossing, the radius
    minimizing |Recall - Accuracy|.
    """
    if not rows:
        raise ValueError("empty sweep table")
    diffs = [row["recall"] - row["accuracy"] for row in rows]
    if diffs[0] == 0.0:
        return rows[0]["radius"]
    for k in range(1, len(rows)):
        if diffs[k] == 0.0 or diffs[k - 1] * diffs[k] < 0.0:
            return rows[k]["radius"]
    best = min(range(len(rows)), key=lambda k: abs(diffs[k]))
    return rows[best]["radius"]


def gt_outline(gt):
    """Foreground pixels 4-adjacent to background (within the image)."""
    g = _as_mask("gt", gt).astype(bool)
    inner = np.zeros_like(g)
    inner[1:, :] |= ~g[:-1, :]
    inner[:-1, :] |= ~g[1:, :]
    inner[:, 1:] |= ~g[:, :-1]
    inner[:, :-1] |= ~g[:, 1:]
    return (g & inner).astype(np.uint8)


def render_overlay(original, pixel_mask, patch_mask, gt=None, alpha=0.5):
    """Paint masks over the grayscale original.

    Pixel-only foreground blends red, patch-only blends fluorescent green,
    overlap blends yellow; GT boundary pixels are drawn opaque purple on
    top. Returns an (H,W,3) uint8 image.
    """
    img = np.asarray(original, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"original must be a 2-d grayscale image, got {img.shape}")
    px = _as_mask("pixel_mask", pixel_mask)
    pa = _as_mask("patch_mask", patch_mask)
    if px.shape != img.shape or pa.shape != img.shape:
        raise ValueError("mask dimensions must match the original image")
    base = np.clip(img, 0.0, 1.0) * 255.0
    out = np.repeat(base[:, :, None], 3, axis=2)
    layers = [
        ((px == 1) & (pa == 0), COLOR_PIXEL_ONLY),
        ((px == 0) & (pa == 1), COLOR_PATCH_ONLY),
        ((px == 1) & (pa == 1), COLOR_OVERLAP),
    ]
    for sel, color in layers:
        for ch in range(3):
            out[sel, ch] = (1.0 - alpha) * out[sel, ch] + alpha * color[ch]
    if gt is not None:
        edge = gt_outline(gt) == 1
        if edge.shape != img.shape:
            raise ValueError("gt dimensions must match the original image")
        for ch in range(3):
            out[edge, ch] = COLOR_GT_OUTLINE[ch]
    return np.round(out).astype(np.uint8)
