"""Fully connected CRF with Gaussian edge potentials, solved by synchronous
mean-field iteration.

The energy is a per-pixel unary cost plus a Potts pairwise term whose
strength is a two-kernel Gaussian: an appearance kernel over position and
intensity distance, and a smoothness kernel over position alone. Exact
all-pairs message passing is the reference path (quadratic in pixel count);
a truncated-neighborhood path covers larger images where kernel mass
outside a few sigmas is negligible.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

# pixel counts up to this run the exact all-pairs path under method="auto"
EXACT_PIXEL_LIMIT = 4096


@dataclass
class CrfParams:
    w1: float = 10.0            # appearance kernel weight
    w2: float = 3.0             # smoothness kernel weight
    sigma_alpha: float = 60.0   # appearance position scale (pixels)
    sigma_beta: float = 0.078   # appearance intensity scale ([0,1] units)
    sigma_gamma: float = 3.0    # smoothness position scale (pixels)
    num_labels: int = 2
    num_iterations: int = 10

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("kernel weights must be nonnegative")
        if min(self.sigma_alpha, self.sigma_beta, self.sigma_gamma) <= 0:
            raise ValueError("kernel scales must be positive")
        if self.num_labels < 2:
            raise ValueError("need at least 2 labels")
        if self.num_iterations < 0:
            raise ValueError("iteration count must be >= 0")


@dataclass
class PixelFeatures:
    """Per-pixel positions and intensities on a full H x W grid."""

    intensities: np.ndarray  # (H,W) grayscale or (H,W,3) RGB, values in [0,1]
    height: int
    width: int

    @classmethod
    def from_image(cls, img):
        img = np.asarray(img, dtype=np.float64)
        if img.ndim not in (2, 3):
            raise ValueError(f"expected (H,W) or (H,W,3) image, got shape {img.shape}")
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError("intensities must lie in [0,1]")
        return cls(intensities=img, height=img.shape[0], width=img.shape[1])

    @property
    def positions(self):
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        return np.stack([ys.ravel(), xs.ravel()], axis=1).astype(np.float64)

    @property
    def flat_intensities(self):
        i = self.intensities
        if i.ndim == 2:
            return i.reshape(-1, 1)
        return i.reshape(-1, i.shape[2])


def unary_from_probabilities(prob, eps=1e-6):
    """Negative-log costs from a foreground probability map.

    Returns (2,H,W): row 0 is background cost -log(1-p), row 1 is
    foreground cost -log(p); probabilities are clamped away from {0,1}.
    """
    p = np.clip(np.asarray(prob, dtype=np.float64), eps, 1.0 - eps)
    return np.stack([-np.log(1.0 - p), -np.log(p)])


def unary_from_mask(mask, confidence=0.9, eps=1e-6):
    """Unary costs for a hard {0,1} mask, softened to p in {1-c, c}."""
    if not 0.5 < confidence < 1.0:
        raise ValueError(f"confidence must be in (0.5, 1), got {confidence}")
    m = np.asarray(mask)
    p = np.where(m > 0, confidence, 1.0 - confidence)
    return unary_from_probabilities(p, eps)


def pairwise_kernel(i, j, feats, params):
    """k(f_i, f_j) for flat pixel indices i, j."""
    pos = feats.positions
    intens = feats.flat_intensities
    d2 = float(np.sum((pos[i] - pos[j]) ** 2))
    i2 = float(np.sum((intens[i] - intens[j]) ** 2))
    app = params.w1 * math.exp(
        -d2 / (2.0 * params.sigma_alpha ** 2) - i2 / (2.0 * params.sigma_beta ** 2))
    smo = params.w2 * math.exp(-d2 / (2.0 * params.sigma_gamma ** 2))
    return app + smo


def kernel_matrix(feats, params):
    """Dense (N,N) pairwise kernel; diagonal holds k(i,i) = w1 + w2."""
    return kernels.crf_kernel_matrix(
        feats.positions, feats.flat_intensities,
        params.w1, params.w2,
        params.sigma_alpha, params.sigma_beta, params.sigma_gamma)


def truncation_radius(params):
    return int(math.ceil(3.0 * max(params.sigma_alpha, params.sigma_gamma)))


def _normalize_rows(logits):
    # logits (N,L) -> row-stochastic probabilities, max-shifted for stability
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _potts_message(q_flat, feats, params, kmat, method):
    # message[i,l] = sum_{j != i} k(i,j) * (1 - Q_j(l))
    if method == "exact":
        comp = 1.0 - q_flat
        msg = kmat @ comp
        msg -= (params.w1 + params.w2) * comp  # remove the j == i term
        return msg
    h, w = feats.height, feats.width
    q_img = np.ascontiguousarray(q_flat.reshape(h, w, -1))
    intens = np.ascontiguousarray(
        feats.flat_intensities.reshape(h, w, -1))
    msg = kernels.crf_message_truncated(
        q_img, intens, truncation_radius(params),
        params.w1, params.w2,
        params.sigma_alpha, params.sigma_beta, params.sigma_gamma)
    return msg.reshape(-1, q_flat.shape[1])


def _resolve_method(method, n_pixels):
    if method == "auto":
        return "exact" if n_pixels <= EXACT_PIXEL_LIMIT else "truncated"
    if method not in ("exact", "truncated"):
        raise ValueError(f"method must be auto|exact|truncated, got {method!r}")
    return method


def _check_unary(unary, feats, params):
    u = np.asarray(unary, dtype=np.float64)
    expect = (params.num_labels, feats.height, feats.width)
    if u.shape != expect:
        raise ValueError(f"unary must have shape {expect}, got {u.shape}")
    if not np.isfinite(u).all():
        raise ValueError("unary costs must be finite")
    return u


def mean_field_step(q, unary, feats, params, kernel_mat=None, method="exact"):
    """One synchronous mean-field update; reads only the old Q.

    Q and the unary costs are (L,H,W); every pixel's new distribution is
    softmax(-U - Potts message) computed from the previous field.
    """
    u = _check_unary(unary, feats, params)
    n = feats.height * feats.width
    q_flat = np.asarray(q, dtype=np.float64).reshape(params.num_labels, n).T
    method = _resolve_method(method, n)
    if method == "exact" and kernel_mat is None:
        kernel_mat = kernel_matrix(feats, params)
    msg = _potts_message(q_flat, feats, params, kernel_mat, method)
    logits = -u.reshape(params.num_labels, n).T - msg
    q_new = _normalize_rows(logits)
    return q_new.T.reshape(params.num_labels, feats.height, feats.width)


def mean_field_infer(unary, feats, params, method="auto"):
    """Initialize Q = softmax(-U) and run num_iterations synchronous steps."""
    u = _check_unary(unary, feats, params)
    n = feats.height * feats.width
    method = _resolve_method(method, n)
    q_flat = _normalize_rows(-u.reshape(params.num_labels, n).T)
    q = q_flat.T.reshape(u.shape)
    kmat = None
    if method == "exact" and params.num_iterations > 0:
        kmat = kernel_matrix(feats, params)
    for _ in range(params.num_iterations):
        q = mean_field_step(q, u, feats, params, kernel_mat=kmat, method=method)
    return q


def map_labeling(q):
    """Per-pixel argmax; exact ties go to the lower label index."""
    return np.argmax(np.asarray(q), axis=0).astype(np.uint8)


def energy(labeling, unary, feats, params):
    """E(x) = sum of unary costs + sum over unordered pairs of
    k(f_i, f_j) * [x_i != x_j] (Potts: equal labels cost nothing)."""
    u = _check_unary(unary, feats, params)
    lab = np.asarray(labeling).reshape(-1)
    n = lab.size
    if n != feats.height * feats.width:
        raise ValueError("labeling size does not match the pixel grid")
    idx = (lab, np.arange(n) // feats.width, np.arange(n) % feats.width)
    e_unary = float(u[idx].sum())
    kmat = kernel_matrix(feats, params)
    differ = lab[:, None] != lab[None, :]
    e_pair = 0.5 * float((kmat * differ).sum())
    return e_unary + e_pair
