"""Pure-numpy implementations of the hot kernels.

Every function here has a numba twin in ``numba_backend`` with identical
semantics; ``mscc.kernels`` picks one set at import time. These are the
reference implementations: vectorized, allocation-heavy, no JIT warmup.

Conventions: activations are NCHW float64, convolution kernels are
(F, C, kH, kW), inputs to the conv kernels are already zero-padded so
every convolution here is "valid".
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_fwd(xp, k, bias, stride):
    # xp: padded input (N,C,Hp,Wp); k: (F,C,kh,kw) -> (N,F,Ho,Wo)
    kh, kw = k.shape[2], k.shape[3]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, k, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += bias[None, :, None, None]
    return out


def conv2d_bwd_input(dy, k, stride, hp, wp):
    # gradient w.r.t. the padded input; full correlation with the flipped kernel
    n, f, ho, wo = dy.shape
    kh, kw = k.shape[2], k.shape[3]
    if stride > 1:
        spread = np.zeros((n, f, (ho - 1) * stride + 1, (wo - 1) * stride + 1))
        spread[:, :, ::stride, ::stride] = dy
        dy = spread
    pad_h = hp - dy.shape[2] - kh + 1 + 2 * (kh - 1)
    pad_w = wp - dy.shape[3] - kw + 1 + 2 * (kw - 1)
    # pad to (hp + kh - 1, wp + kw - 1) so the valid conv lands on (hp, wp)
    top = kh - 1
    left = kw - 1
    dyp = np.pad(dy, ((0, 0), (0, 0), (top, pad_h - top), (left, pad_w - left)))
    kflip = k[:, :, ::-1, ::-1]
    win = sliding_window_view(dyp, (kh, kw), axis=(2, 3))
    dx = np.tensordot(win, kflip, axes=([1, 4, 5], [0, 2, 3]))
    return np.ascontiguousarray(dx.transpose(0, 3, 1, 2))


def conv2d_bwd_kernel(xp, dy, stride, kh, kw):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    dk = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))
    return np.ascontiguousarray(dk)


def maxpool2x2_fwd(x):
    # returns pooled values and the flat window argmax (0..3, row-major,
    # first occurrence wins so ties resolve to the earliest position)
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = win.reshape(n, c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=4).astype(np.uint8)
    y = np.take_along_axis(flat, idx[..., None].astype(np.int64), axis=4)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2x2_bwd(dy, idx):
    n, c, ho, wo = dy.shape
    flat = np.zeros((n, c, ho, wo, 4))
    np.put_along_axis(flat, idx[..., None].astype(np.int64), dy[..., None], axis=4)
    win = flat.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(win.reshape(n, c, ho * 2, wo * 2))


def upconv2x2_fwd(x, k, bias):
    # transpose convolution, kernel (C,F,2,2), stride 2: exact spatial doubling
    out = np.tensordot(x, k, axes=([1], [0]))  # (N,H,W,F,2,2)
    n, h, w, f = out.shape[:4]
    out = out.transpose(0, 3, 1, 4, 2, 5).reshape(n, f, 2 * h, 2 * w)
    return np.ascontiguousarray(out) + bias[None, :, None, None]


def upconv2x2_bwd_input(dy, k):
    n, f, h2, w2 = dy.shape
    win = dy.reshape(n, f, h2 // 2, 2, w2 // 2, 2).transpose(0, 2, 4, 1, 3, 5)
    dx = np.tensordot(win, k, axes=([3, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(dx.transpose(0, 3, 1, 2))


def upconv2x2_bwd_kernel(x, dy):
    n, f, h2, w2 = dy.shape
    win = dy.reshape(n, f, h2 // 2, 2, w2 // 2, 2)
    dk = np.tensordot(x, win, axes=([0, 2, 3], [0, 2, 4]))  # (C,F,2,2)
    return np.ascontiguousarray(dk)


def crf_kernel_matrix(pos, intens, w1, w2, sa, sb, sg):
    # pos (N,2) float64 pixel coordinates, intens (N,D) features in [0,1]
    d2 = np.zeros((pos.shape[0], pos.shape[0]))
    for a in range(pos.shape[1]):
        diff = pos[:, a, None] - pos[None, :, a]
        d2 += diff * diff
    i2 = np.zeros_like(d2)
    for a in range(intens.shape[1]):
        diff = intens[:, a, None] - intens[None, :, a]
        i2 += diff * diff
    app = w1 * np.exp(-d2 / (2.0 * sa * sa) - i2 / (2.0 * sb * sb))
    smo = w2 * np.exp(-d2 / (2.0 * sg * sg))
    return app + smo


def crf_message_truncated(q, intens, radius, w1, w2, sa, sb, sg):
    # q (H,W,L), intens (H,W,D); Potts message over a (2r+1)^2 neighborhood
    h, w, nl = q.shape
    msg = np.zeros_like(q)
    comp = 1.0 - q
    for dy in range(-radius, radius + 1):
        ys_lo, ys_hi = max(0, -dy), min(h, h - dy)
        yt_lo, yt_hi = max(0, dy), min(h, h + dy)
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            xs_lo, xs_hi = max(0, -dx), min(w, w - dx)
            xt_lo, xt_hi = max(0, dx), min(w, w + dx)
            p2 = float(dy * dy + dx * dx)
            i2 = np.sum(
                (intens[yt_lo:yt_hi, xt_lo:xt_hi] - intens[ys_lo:ys_hi, xs_lo:xs_hi]) ** 2,
                axis=-1,
            )
            kv = w1 * np.exp(-p2 / (2.0 * sa * sa) - i2 / (2.0 * sb * sb))
            kv = kv + w2 * np.exp(-p2 / (2.0 * sg * sg))
            msg[yt_lo:yt_hi, xt_lo:xt_hi] += kv[..., None] * comp[ys_lo:ys_hi, xs_lo:xs_hi]
    return msg


def dilate_chebyshev(mask, radius):
    # separable sliding max over a (2r+1) square; mask is uint8 {0,1}
    if radius == 0:
        return mask.copy()
    size = 2 * radius + 1
    padded = np.pad(mask, ((0, 0), (radius, radius)))
    out = sliding_window_view(padded, size, axis=1).max(axis=2)
    padded = np.pad(out, ((radius, radius), (0, 0)))
    out = sliding_window_view(padded, size, axis=0).max(axis=2)
    return np.ascontiguousarray(out.astype(np.uint8))
