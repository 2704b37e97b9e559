"""Pure-numpy convolution kernels (im2col style); fallback backend."""

import numpy as np

BACKEND = "numpy"


def conv2d_forward(xp, kernel, sh, sw):
    kh, kw, cin, cout = kernel.shape
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    win = win[::sh, ::sw]  # (ho, wo, cin, kh, kw)
    out = np.einsum("hwcuv,uvco->hwo", win, kernel, optimize=True)
    return np.ascontiguousarray(out.astype(xp.dtype, copy=False))


def conv2d_backward_input(gy, kernel, sh, sw, hp, wp):
    kh, kw, cin, cout = kernel.shape
    ho, wo, _ = gy.shape
    gx = np.zeros((hp, wp, cin), dtype=gy.dtype)
    for u in range(kh):
        for v in range(kw):
            gx[u : u + ho * sh : sh, v : v + wo * sw : sw] += gy @ kernel[u, v].T
    return gx


def conv2d_backward_kernel(xp, gy, kh, kw, sh, sw):
    ho, wo, cout = gy.shape
    cin = xp.shape[2]
    gk = np.empty((kh, kw, cin, cout), dtype=gy.dtype)
    for u in range(kh):
        for v in range(kw):
            xs = xp[u : u + ho * sh : sh, v : v + wo * sw : sw]
            gk[u, v] = np.einsum("hwc,hwo->co", xs, gy, optimize=True)
    return gk
