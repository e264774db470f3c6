"""Hot loops: patch gather/scatter for convolution and the per-pixel hue shift.

Two interchangeable backends: numba ``@njit`` loops and a pure-numpy path
built on strided views. The backend is picked once at import time from the
``MMV_KERNELS`` environment variable (``numba`` or ``numpy``); ``numba`` is
the default when the package imports cleanly. Both backends produce
bit-identical results (pure copies / fixed-order additions).
"""
import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_requested = os.environ.get("MMV_KERNELS", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"MMV_KERNELS must be 'numba' or 'numpy', got {_requested!r}")

try:
    if _requested != "numba":
        raise ImportError
    from numba import njit
except ImportError:  # pragma: no cover - depends on environment
    njit = None

BACKEND = "numba" if njit is not None else "numpy"


def im2col_numpy(xp, ksize, stride, out_size):
    """Gather patches: [N,T,H,W,C] -> [N,To,Ho,Wo,Kt,Kh,Kw,C]."""
    kt, kh, kw = ksize
    st, sh, sw = stride
    to, ho, wo = out_size
    win = sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))
    win = win[:, : st * (to - 1) + 1 : st, : sh * (ho - 1) + 1 : sh, : sw * (wo - 1) + 1 : sw]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 3, 5, 6, 7, 4))


def col2im_numpy(dcols, in_shape, stride):
    """Scatter-add patch gradients back onto the (padded) input grid."""
    st, sh, sw = stride
    _, to, ho, wo, kt, kh, kw, _ = dcols.shape
    dx = np.zeros(in_shape, dtype=dcols.dtype)
    for a in range(kt):
        for b in range(kh):
            for c in range(kw):
                dx[
                    :,
                    a : a + st * (to - 1) + 1 : st,
                    b : b + sh * (ho - 1) + 1 : sh,
                    c : c + sw * (wo - 1) + 1 : sw,
                ] += dcols[:, :, :, :, a, b, c]
    return dx


def rgb_to_hsv(rgb):
    """[..., 3] RGB in [0, 1] -> (h, s, v), h in [0, 1)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    d = mx - rgb.min(axis=-1)
    s = d / np.where(mx > 0, mx, 1.0)
    safe = np.where(d > 0, d, 1.0)
    h = np.where(mx == r, (g - b) / safe, np.where(mx == g, 2.0 + (b - r) / safe, 4.0 + (r - g) / safe))
    return (h / 6.0) % 1.0, s, mx


def hsv_to_rgb(h, s, v):
    """Vectorised HSV -> RGB (all channels in [0, 1]); returns [..., 3]."""
    h6 = (np.asarray(h) % 1.0)[..., None] * 6.0
    k = (np.array([5.0, 3.0, 1.0], dtype=h6.dtype) + h6) % 6.0
    s, v = np.asarray(s)[..., None], np.asarray(v)[..., None]
    return v - v * s * np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)


def hue_shift_numpy(x, delta):
    """Rotate the hue of float32 RGB pixels [..., 3] by ``delta`` turns."""
    h, s, v = rgb_to_hsv(x)
    return hsv_to_rgb(h + delta, s, v)


if njit is not None:

    @njit(cache=True)
    def _im2col_loop(xp, out, st, sh, sw):
        n_, to, ho, wo, kt, kh, kw, ch = out.shape
        for n in range(n_):
            for t in range(to):
                for h in range(ho):
                    for w in range(wo):
                        for a in range(kt):
                            for b in range(kh):
                                for c in range(kw):
                                    for k in range(ch):
                                        out[n, t, h, w, a, b, c, k] = xp[
                                            n, t * st + a, h * sh + b, w * sw + c, k
                                        ]

    @njit(cache=True)
    def _col2im_loop(dcols, dx, st, sh, sw):
        # gather form: each input cell sums its patches in (a, b, c) order,
        # which is the order the numpy path accumulates in
        n_, to, ho, wo, kt, kh, kw, ch = dcols.shape
        _, ti, hi, wi, _ = dx.shape
        for n in range(n_):
            for tt in range(ti):
                for hh in range(hi):
                    for ww in range(wi):
                        for a in range(kt):
                            ra = tt - a
                            if ra < 0 or ra % st != 0 or ra // st >= to:
                                continue
                            t = ra // st
                            for b in range(kh):
                                rb = hh - b
                                if rb < 0 or rb % sh != 0 or rb // sh >= ho:
                                    continue
                                h = rb // sh
                                for c in range(kw):
                                    rc = ww - c
                                    if rc < 0 or rc % sw != 0 or rc // sw >= wo:
                                        continue
                                    w = rc // sw
                                    for k in range(ch):
                                        dx[n, tt, hh, ww, k] += dcols[n, t, h, w, a, b, c, k]

    def im2col_numba(xp, ksize, stride, out_size):
        xp = np.ascontiguousarray(xp)
        out = np.empty((xp.shape[0], *out_size, *ksize, xp.shape[4]), dtype=xp.dtype)
        _im2col_loop(xp, out, *stride)
        return out

    def col2im_numba(dcols, in_shape, stride):
        dx = np.zeros(in_shape, dtype=dcols.dtype)
        _col2im_loop(np.ascontiguousarray(dcols), dx, *stride)
        return dx

    @njit(cache=True)
    def _hue_loop(x, out, delta):
        # float32 throughout, same operation order as the numpy path
        zero, one, two = np.float32(0.0), np.float32(1.0), np.float32(2.0)
        four, six = np.float32(4.0), np.float32(6.0)
        offsets = (np.float32(5.0), np.float32(3.0), np.float32(1.0))
        for i in range(x.shape[0]):
            r, g, b = x[i, 0], x[i, 1], x[i, 2]
            mx = max(r, g, b)
            d = mx - min(r, g, b)
            s = d / (mx if mx > zero else one)
            safe = d if d > zero else one
            if mx == r:
                h = (g - b) / safe
            elif mx == g:
                h = two + (b - r) / safe
            else:
                h = four + (r - g) / safe
            h6 = (((h / six) % one + delta) % one) * six
            for c in range(3):
                k = (offsets[c] + h6) % six
                m = min(max(min(k, four - k), zero), one)
                out[i, c] = mx - mx * s * m

    def hue_shift_numba(x, delta):
        if x.dtype != np.float32:
            return hue_shift_numpy(x, delta)
        flat = np.ascontiguousarray(x).reshape(-1, 3)
        out = np.empty_like(flat)
        _hue_loop(flat, out, np.float32(delta))
        return out.reshape(x.shape)

    im2col = im2col_numba
    col2im = col2im_numba
    hue_shift = hue_shift_numba
else:
    im2col = im2col_numpy
    col2im = col2im_numpy
    hue_shift = hue_shift_numpy
