"""Training loops for the pixel-level segmentation networks.

Single-stream, seeded batch order, binary cross-entropy on the sigmoid
output, Adam updates. Per-epoch train/validation loss and pixel accuracy
rows feed the curves CSV.
"""

import numpy as np

from . import autodiff as ad
from .netbuilder import (BlockVariant, UNET_WIDTHS, MU_NET_WIDTHS, build_mu_net,
                         build_unet, scaled_widths)
from .network import Network

ARCH_NAMES = ("unet", "b1", "b2", "b3")


def build_arch(arch, width_scale=1.0, in_channels=1):
    if arch == "unet":
        return build_unet(scaled_widths(UNET_WIDTHS, width_scale), in_channels)
    try:
        variant = BlockVariant(arch)
    except ValueError:
        raise ValueError(f"unknown architecture {arch!r}; choose from {ARCH_NAMES}")
    return build_mu_net(variant, scaled_widths(MU_NET_WIDTHS, width_scale), in_channels)


def _stack_pairs(pairs):
    imgs = np.stack([img for img, _ in pairs])[:, None, :, :]
    gts = np.stack([gt for _, gt in pairs]).astype(np.float64)[:, None, :, :]
    return imgs, gts


def _eval_batches(net, imgs, gts, batch_size):
    total_loss = 0.0
    correct = 0
    for lo in range(0, imgs.shape[0], batch_size):
        x = imgs[lo:lo + batch_size]
        y = gts[lo:lo + batch_size]
        out, _ = net.forward(x, mode="infer")
        loss = ad.bce_loss(out, y)
        total_loss += float(loss.data) * x.shape[0]
        correct += int(((out.data >= 0.5) == (y >= 0.5)).sum())
    n = imgs.shape[0]
    return total_loss / n, correct / gts.size


def train_pixel_model(train_pairs, val_pairs, arch="b3", width_scale=1.0,
                      lr=1.5e-4, epochs=50, batch_size=4, seed=0, log=None):
    """Train a pixel network on (image, gt) pairs.

    Returns (network, curve rows); each row is (epoch, train_loss,
    train_acc, val_loss, val_acc). Deterministic for a fixed seed.
    """
    if not train_pairs:
        raise ValueError("no training pairs")
    spec = build_arch(arch, width_scale)
    net = Network(spec, seed=seed)
    state = ad.AdamState(lr=lr)
    imgs, gts = _stack_pairs(train_pairs)
    val_imgs, val_gts = _stack_pairs(val_pairs) if val_pairs else (None, None)
    rng = np.random.default_rng(seed)
    n = imgs.shape[0]
    curves = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for bi, lo in enumerate(range(0, n, batch_size)):
            sel = order[lo:lo + batch_size]
            out, wrappers = net.forward(imgs[sel], mode="train")
            loss = ad.bce_loss(out, gts[sel])
            if not np.isfinite(loss.data):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch {bi}")
            loss.backward()
            grads = {k: w.grad for k, w in wrappers.items() if w.grad is not None}
            ad.adam_step(net.params, grads, state)
            total_loss += float(loss.data) * sel.size
            correct += int(((out.data >= 0.5) == (gts[sel] >= 0.5)).sum())
        train_loss = total_loss / n
        train_acc = correct / (n * gts.shape[2] * gts.shape[3])
        if val_imgs is not None:
            val_loss, val_acc = _eval_batches(net, val_imgs, val_gts, batch_size)
        else:
            val_loss, val_acc = float("nan"), float("nan")
        curves.append((epoch, train_loss, train_acc, val_loss, val_acc))
        if log:
            log(f"pixel epoch {epoch}/{epochs}: loss {train_loss:.4f} "
                f"acc {train_acc:.4f} val_loss {val_loss:.4f} val_acc {val_acc:.4f}")
    return net, curves


def pixel_curves_csv(curves):
    lines = ["epoch,train_loss,train_accuracy,val_loss,val_accuracy"]
    for epoch, tl, ta, vl, va in curves:
        lines.append(f"{epoch},{tl:.6f},{ta:.6f},{vl:.6f},{va:.6f}")
    return "\n".join(lines) + "\n"


def patch_curves_csv(curves):
    lines = ["epoch,loss,accuracy"]
    for epoch, loss, acc in curves:
        lines.append(f"{epoch},{loss:.6f},{acc:.6f}")
    return "\n".join(lines) + "\n"


def predict_probability_map(net, image):
    """Foreground probability map of one grayscale image."""
    out = net.predict(image[None, None, :, :])
    return out[0, 0]
