"""Compiled inner loops for the hot paths of training (patch extraction and HSV jitter)."""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def im2col_s2(x):
    """3x3, stride 2, zero pad 1 patches of an NHWC batch -> (B, Ho, Wo, 9C)."""
    b, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    out = np.zeros((b, ho, wo, 9 * c), x.dtype)
    for n in range(b):
        for i in range(ho):
            for j in range(wo):
                for di in range(3):
                    r = 2 * i + di - 1
                    if r < 0 or r >= h:
                        continue
                    for dj in range(3):
                        q = 2 * j + dj - 1
                        if q < 0 or q >= w:
                            continue
                        k = (3 * di + dj) * c
                        for ch in range(c):
                            out[n, i, j, k + ch] = x[n, r, q, ch]
    return out


@njit(cache=True)
def col2im_s2(dcols, h, w):
    """Adjoint of :func:`im2col_s2`: scatter-add patch gradients back to the input grid."""
    b, ho, wo, kc = dcols.shape
    c = kc // 9
    out = np.zeros((b, h, w, c), dcols.dtype)
    for n in range(b):
        for i in range(ho):
            for j in range(wo):
                for di in range(3):
                    r = 2 * i + di - 1
                    if r < 0 or r >= h:
                        continue
                    for dj in range(3):
                        q = 2 * j + dj - 1
                        if q < 0 or q >= w:
                            continue
                        k = (3 * di + dj) * c
                        for ch in range(c):
                            out[n, r, q, ch] += dcols[n, i, j, k + ch]
    return out


@njit(cache=True)
def hsv_jitter(imgs, noise):
    """Per-image HSV shift of a (B, H, W, 3) batch in [0, 1]; hue wraps, S and V clamp."""
    b, h, w, _ = imgs.shape
    out = np.empty_like(imgs)
    for n in range(b):
        dh, ds, dv = np.float64(noise[n, 0]), np.float64(noise[n, 1]), np.float64(noise[n, 2])
        for i in range(h):
            for j in range(w):
                r = min(max(np.float64(imgs[n, i, j, 0]), 0.0), 1.0)
                g = min(max(np.float64(imgs[n, i, j, 1]), 0.0), 1.0)
                bl = min(max(np.float64(imgs[n, i, j, 2]), 0.0), 1.0)
                v = max(r, g, bl)
                cr = v - min(r, g, bl)
                hue = 0.0
                if cr > 0:
                    if v == r:
                        hue = (g - bl) / cr
                    elif v == g:
                        hue = (bl - r) / cr + 2.0
                    else:
                        hue = (r - g) / cr + 4.0
                    hue = hue / 6.0
                    hue -= np.floor(hue)
                s = cr / v if v > 0 else 0.0
                hue += dh
                hue -= np.floor(hue)
                s = min(max(s + ds, 0.0), 1.0)
                v = min(max(v + dv, 0.0), 1.0)
                h6 = hue * 6.0
                for ch in range(3):
                    k = h6 + (5.0 - 2.0 * ch)
                    k -= 6.0 * np.floor(k / 6.0)
                    t = min(max(min(k, 4.0 - k), 0.0), 1.0)
                    out[n, i, j, ch] = min(max(v - v * s * t, 0.0), 1.0)
    return out


@njit(cache=True)
def gather_crop(imgs, rows, cols):
    """out[n, i, j] = imgs[n, rows[n, i], cols[n, j]], zero where an index is -1."""
    b, h, w, c = imgs.shape
    out = np.zeros((b, rows.shape[1], cols.shape[1], c), imgs.dtype)
    for n in range(b):
        for i in range(rows.shape[1]):
            r = rows[n, i]
            if r < 0:
                continue
            for j in range(cols.shape[1]):
                q = cols[n, j]
                if q < 0:
                    continue
                for ch in range(c):
                    out[n, i, j, ch] = imgs[n, r, q, ch]
    return out


@njit(cache=True)
def random_conv(imgs, kernels):
    """Per-image 3x3 convolution with edge-replicated borders, then min-max rescaled to [0, 1].

    ``kernels`` is (B, 3, 3, 3, 3) as (row, col, c_in, c_out). A constant
    response is returned as that constant clipped into [0, 1].
    """
    b, h, w, c = imgs.shape
    out = np.empty((b, h, w, 3), imgs.dtype)
    acc = np.empty((h, w, 3))
    for n in range(b):
        kn = kernels[n]
        lo = np.inf
        hi = -np.inf
        for i in range(h):
            for j in range(w):
                a0 = 0.0
                a1 = 0.0
                a2 = 0.0
                for di in range(3):
                    r = min(max(i + di - 1, 0), h - 1)
                    for dj in range(3):
                        q = min(max(j + dj - 1, 0), w - 1)
                        for ci in range(c):
                            v = np.float64(imgs[n, r, q, ci])
                            a0 += v * kn[di, dj, ci, 0]
                            a1 += v * kn[di, dj, ci, 1]
                            a2 += v * kn[di, dj, ci, 2]
                acc[i, j, 0] = a0
                acc[i, j, 1] = a1
                acc[i, j, 2] = a2
                lo = min(lo, a0, a1, a2)
                hi = max(hi, a0, a1, a2)
        span = hi - lo
        for i in range(h):
            for j in range(w):
                for k in range(3):
                    if span > 1e-6:
                        out[n, i, j, k] = (acc[i, j, k] - lo) / span
                    else:
                        out[n, i, j, k] = min(max(acc[i, j, k], 0.0), 1.0)
    return out
