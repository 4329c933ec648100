"""Image file plumbing.

Binary masks travel as 8-bit PGM (0/255), probability maps as 16-bit PGM
(value / 65535 = p), photographs and overlays as PNG via Pillow. PGM is
written by hand so the byte layout is pinned; 16-bit samples are
big-endian per the format.
"""

import numpy as np
from PIL import Image


def write_pgm(path, arr, maxval):
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ValueError(f"PGM needs a 2-d array, got shape {a.shape}")
    if maxval == 255:
        payload = a.astype(np.uint8).tobytes()
    elif maxval == 65535:
        payload = a.astype(">u2").tobytes()
    else:
        raise ValueError(f"maxval must be 255 or 65535, got {maxval}")
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + payload)


def read_pgm(path):
    """Returns (array, maxval); array dtype uint8 or uint16."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise ValueError(f"{path}: only binary (P5) PGM is supported")
    fields = []
    off = 2
    while len(fields) < 3:
        while off < len(blob) and blob[off:off + 1].isspace():
            off += 1
        if blob[off:off + 1] == b"#":
            while off < len(blob) and blob[off:off + 1] != b"\n":
                off += 1
            continue
        start = off
        while off < len(blob) and not blob[off:off + 1].isspace():
            off += 1
        fields.append(int(blob[start:off]))
    off += 1  # single whitespace after maxval
    width, height, maxval = fields
    n = width * height
    if maxval <= 255:
        data = np.frombuffer(blob, dtype=np.uint8, count=n, offset=off)
    elif maxval <= 65535:
        data = np.frombuffer(blob, dtype=">u2", count=n, offset=off).astype(np.uint16)
    else:
        raise ValueError(f"{path}: maxval {maxval} out of range")
    return data.reshape(height, width).copy(), maxval


def write_mask(path, mask):
    m = np.asarray(mask)
    if not np.isin(m, (0, 1)).all():
        raise ValueError("mask must be binary (0/1)")
    write_pgm(path, m.astype(np.uint8) * 255, 255)


def read_mask(path):
    arr, maxval = read_pgm(path)
    half = (maxval + 1) // 2
    return (arr >= half).astype(np.uint8)


def write_prob(path, prob):
    p = np.asarray(prob, dtype=np.float64)
    if p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("probability map must lie in [0,1]")
    write_pgm(path, np.round(p * 65535.0).astype(np.uint16), 65535)


def read_prob(path):
    arr, maxval = read_pgm(path)
    return arr.astype(np.float64) / maxval


def write_png_gray(path, img01):
    a = np.asarray(img01, dtype=np.float64)
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError("grayscale image must lie in [0,1]")
    Image.fromarray(np.round(a * 255.0).astype(np.uint8), mode="L").save(path)


def write_png_rgb(path, rgb):
    a = np.asarray(rgb)
    if a.ndim != 3 or a.shape[2] != 3 or a.dtype != np.uint8:
        raise ValueError("expected an (H,W,3) uint8 array")
    Image.fromarray(a, mode="RGB").save(path)


def load_image(path):
    """Any PNG/PGM file as float64; RGB returns (H,W,3), grayscale (H,W)."""
    with Image.open(path) as im:
        if im.mode in ("RGB", "RGBA", "P"):
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        elif im.mode == "I;16":
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode == "I":
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return arr


def to_grayscale(img):
    """Luminance conversion (0.299 R + 0.587 G + 0.114 B) for RGB inputs."""
    if img.ndim == 2:
        return img
    weights = np.array([0.299, 0.587, 0.114])
    return img[:, :, :3] @ weights


def resize_bilinear(img01, size):
    """Bilinear resize of a [0,1] grayscale image to size x size."""
    im = Image.fromarray(np.round(np.asarray(img01) * 255.0).astype(np.uint8), mode="L")
    out = im.resize((size, size), Image.BILINEAR)
    return np.asarray(out, dtype=np.float64) / 255.0


def resize_nearest_binary(mask, size):
    """Nearest-neighbor resize of a {0,1} mask, re-binarized at 0.5."""
    im = Image.fromarray(np.asarray(mask).astype(np.uint8) * 255, mode="L")
    out = np.asarray(im.resize((size, size), Image.NEAREST), dtype=np.float64) / 255.0
    return (out >= 0.5).astype(np.uint8)
