"""Numba-jitted twins of the hot kernels in ``numpy_backend``.

Same signatures, same semantics, loop-structured so numba can compile them.
Parallel loops only ever write disjoint output slots, so results are
bit-identical across runs and thread counts.
"""

import os

# the default TBB layer is version-gated and warns on older TBB installs;
# omp behaves identically for these kernels
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def conv2d_fwd(xp, k, bias, stride):
    # inner loop runs over the contiguous output row so it vectorizes
    n, c, hp, wp = xp.shape
    f, _, kh, kw = k.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.empty((n, f, ho, wo))
    for nf in prange(n * f):
        b = nf // f
        o = nf % f
        for i in range(ho):
            row = out[b, o, i]
            row[:] = bias[o]
            for ch in range(c):
                for u in range(kh):
                    xrow = xp[b, ch, i * stride + u]
                    for v in range(kw):
                        kv = k[o, ch, u, v]
                        if stride == 1:
                            for j in range(wo):
                                row[j] += kv * xrow[j + v]
                        else:
                            for j in range(wo):
                                row[j] += kv * xrow[j * stride + v]
    return out


@njit(cache=True, parallel=True)
def conv2d_bwd_input(dy, k, stride, hp, wp):
    n, f, ho, wo = dy.shape
    _, c, kh, kw = k.shape
    dx = np.zeros((n, c, hp, wp))
    for nc in prange(n * c):
        b = nc // c
        ch = nc % c
        for o in range(f):
            for i in range(ho):
                dyrow = dy[b, o, i]
                for u in range(kh):
                    dxrow = dx[b, ch, i * stride + u]
                    for v in range(kw):
                        kv = k[o, ch, u, v]
                        if stride == 1:
                            for j in range(wo):
                                dxrow[j + v] += kv * dyrow[j]
                        else:
                            for j in range(wo):
                                dxrow[j * stride + v] += kv * dyrow[j]
    return dx


@njit(cache=True, parallel=True)
def conv2d_bwd_kernel(xp, dy, stride, kh, kw):
    n, c, hp, wp = xp.shape
    _, f, ho, wo = dy.shape
    dk = np.zeros((f, c, kh, kw))
    for fc in prange(f * c):
        o = fc // c
        ch = fc % c
        for b in range(n):
            for i in range(ho):
                dyrow = dy[b, o, i]
                for u in range(kh):
                    xrow = xp[b, ch, i * stride + u]
                    for v in range(kw):
                        acc = 0.0
                        if stride == 1:
                            for j in range(wo):
                                acc += dyrow[j] * xrow[j + v]
                        else:
                            for j in range(wo):
                                acc += dyrow[j] * xrow[j * stride + v]
                        dk[o, ch, u, v] += acc
    return dk


@njit(cache=True, parallel=True)
def maxpool2x2_fwd(x):
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    y = np.empty((n, c, ho, wo))
    idx = np.empty((n, c, ho, wo), dtype=np.uint8)
    for nc in prange(n * c):
        b = nc // c
        ch = nc % c
        for i in range(ho):
            for j in range(wo):
                best = x[b, ch, 2 * i, 2 * j]
                arg = 0
                p = 0
                for u in range(2):
                    for v in range(2):
                        val = x[b, ch, 2 * i + u, 2 * j + v]
                        if val > best:  # strict: first occurrence wins ties
                            best = val
                            arg = p
                        p += 1
                y[b, ch, i, j] = best
                idx[b, ch, i, j] = arg
    return y, idx


@njit(cache=True, parallel=True)
def maxpool2x2_bwd(dy, idx):
    n, c, ho, wo = dy.shape
    dx = np.zeros((n, c, ho * 2, wo * 2))
    for nc in prange(n * c):
        b = nc // c
        ch = nc % c
        for i in range(ho):
            for j in range(wo):
                p = idx[b, ch, i, j]
                dx[b, ch, 2 * i + p // 2, 2 * j + p % 2] = dy[b, ch, i, j]
    return dx


@njit(cache=True, parallel=True)
def upconv2x2_fwd(x, k, bias):
    n, c, h, w = x.shape
    _, f, _, _ = k.shape
    out = np.empty((n, f, 2 * h, 2 * w))
    for nf in prange(n * f):
        b = nf // f
        o = nf % f
        for i in range(h):
            for u in range(2):
                orow = out[b, o, 2 * i + u]
                orow[:] = bias[o]
                for ch in range(c):
                    xrow = x[b, ch, i]
                    k0 = k[ch, o, u, 0]
                    k1 = k[ch, o, u, 1]
                    for j in range(w):
                        orow[2 * j] += xrow[j] * k0
                        orow[2 * j + 1] += xrow[j] * k1
    return out


@njit(cache=True, parallel=True)
def upconv2x2_bwd_input(dy, k):
    n, f, h2, w2 = dy.shape
    c = k.shape[0]
    h, w = h2 // 2, w2 // 2
    dx = np.zeros((n, c, h, w))
    for nc in prange(n * c):
        b = nc // c
        ch = nc % c
        for o in range(f):
            for i in range(h):
                dxrow = dx[b, ch, i]
                for u in range(2):
                    dyrow = dy[b, o, 2 * i + u]
                    k0 = k[ch, o, u, 0]
                    k1 = k[ch, o, u, 1]
                    for j in range(w):
                        dxrow[j] += dyrow[2 * j] * k0 + dyrow[2 * j + 1] * k1
    return dx


@njit(cache=True, parallel=True)
def upconv2x2_bwd_kernel(x, dy):
    n, c, h, w = x.shape
    f = dy.shape[1]
    dk = np.zeros((c, f, 2, 2))
    for cf in prange(c * f):
        ch = cf // f
        o = cf % f
        for b in range(n):
            for i in range(h):
                xrow = x[b, ch, i]
                for u in range(2):
                    dyrow = dy[b, o, 2 * i + u]
                    a0 = 0.0
                    a1 = 0.0
                    for j in range(w):
                        a0 += xrow[j] * dyrow[2 * j]
                        a1 += xrow[j] * dyrow[2 * j + 1]
                    dk[ch, o, u, 0] += a0
                    dk[ch, o, u, 1] += a1
    return dk


@njit(cache=True, parallel=True)
def crf_kernel_matrix(pos, intens, w1, w2, sa, sb, sg):
    n = pos.shape[0]
    out = np.empty((n, n))
    inv_a = 1.0 / (2.0 * sa * sa)
    inv_b = 1.0 / (2.0 * sb * sb)
    inv_g = 1.0 / (2.0 * sg * sg)
    for i in prange(n):
        for j in range(n):
            d2 = 0.0
            for a in range(pos.shape[1]):
                diff = pos[i, a] - pos[j, a]
                d2 += diff * diff
            i2 = 0.0
            for a in range(intens.shape[1]):
                diff = intens[i, a] - intens[j, a]
                i2 += diff * diff
            out[i, j] = w1 * np.exp(-d2 * inv_a - i2 * inv_b) + w2 * np.exp(-d2 * inv_g)
    return out


@njit(cache=True, parallel=True)
def crf_message_truncated(q, intens, radius, w1, w2, sa, sb, sg):
    h, w, nl = q.shape
    d = intens.shape[2]
    msg = np.zeros((h, w, nl))
    inv_a = 1.0 / (2.0 * sa * sa)
    inv_b = 1.0 / (2.0 * sb * sb)
    inv_g = 1.0 / (2.0 * sg * sg)
    for yi in prange(h):
        for xi in range(w):
            for yj in range(max(0, yi - radius), min(h, yi + radius + 1)):
                for xj in range(max(0, xi - radius), min(w, xi + radius + 1)):
                    if yi == yj and xi == xj:
                        continue
                    p2 = float((yi - yj) * (yi - yj) + (xi - xj) * (xi - xj))
                    i2 = 0.0
                    for a in range(d):
                        diff = intens[yi, xi, a] - intens[yj, xj, a]
                        i2 += diff * diff
                    kv = w1 * np.exp(-p2 * inv_a - i2 * inv_b) + w2 * np.exp(-p2 * inv_g)
                    for l in range(nl):
                        msg[yi, xi, l] += kv * (1.0 - q[yj, xj, l])
    return msg


@njit(cache=True, parallel=True)
def dilate_chebyshev(mask, radius):
    h, w = mask.shape
    if radius == 0:
        return mask.copy()
    rows = np.empty((h, w), dtype=np.uint8)
    for i in prange(h):
        for j in range(w):
            hit = np.uint8(0)
            for v in range(max(0, j - radius), min(w, j + radius + 1)):
                if mask[i, v]:
                    hit = np.uint8(1)
                    break
            rows[i, j] = hit
    out = np.empty((h, w), dtype=np.uint8)
    for j in prange(w):
        for i in range(h):
            hit = np.uint8(0)
            for u in range(max(0, i - radius), min(h, i + radius + 1)):
                if rows[u, j]:
                    hit = np.uint8(1)
                    break
            out[i, j] = hit
    return out
