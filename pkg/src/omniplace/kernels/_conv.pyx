# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels; hot loops of the training and query paths."""

import numpy as np

cimport cython

BACKEND = "cython"

ctypedef fused floating:
    float
    double


def conv2d_forward(floating[:, :, ::1] xp, floating[:, :, :, ::1] kernel, int sh, int sw):
    cdef Py_ssize_t hp = xp.shape[0], wp = xp.shape[1], cin = xp.shape[2]
    cdef Py_ssize_t kh = kernel.shape[0], kw = kernel.shape[1], cout = kernel.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // sh + 1
    cdef Py_ssize_t wo = (wp - kw) // sw + 1
    if floating is float:
        out = np.zeros((ho, wo, cout), dtype=np.float32)
    else:
        out = np.zeros((ho, wo, cout), dtype=np.float64)
    cdef floating[:, :, ::1] y = out
    cdef Py_ssize_t h, w, u, v, c, o
    cdef floating x
    with nogil:
        for h in range(ho):
            for w in range(wo):
                for u in range(kh):
                    for v in range(kw):
                        for c in range(cin):
                            x = xp[h * sh + u, w * sw + v, c]
                            for o in range(cout):
                                y[h, w, o] += x * kernel[u, v, c, o]
    return out


def conv2d_backward_input(floating[:, :, ::1] gy, floating[:, :, :, ::1] kernel,
                          int sh, int sw, Py_ssize_t hp, Py_ssize_t wp):
    cdef Py_ssize_t ho = gy.shape[0], wo = gy.shape[1], cout = gy.shape[2]
    cdef Py_ssize_t kh = kernel.shape[0], kw = kernel.shape[1], cin = kernel.shape[2]
    if floating is float:
        out = np.zeros((hp, wp, cin), dtype=np.float32)
    else:
        out = np.zeros((hp, wp, cin), dtype=np.float64)
    cdef floating[:, :, ::1] gx = out
    cdef Py_ssize_t h, w, u, v, c, o
    cdef floating g
    with nogil:
        for h in range(ho):
            for w in range(wo):
                for u in range(kh):
                    for v in range(kw):
                        for c in range(cin):
                            g = 0
                            for o in range(cout):
                                g += gy[h, w, o] * kernel[u, v, c, o]
                            gx[h * sh + u, w * sw + v, c] += g
    return out


def conv2d_backward_kernel(floating[:, :, ::1] xp, floating[:, :, ::1] gy,
                           Py_ssize_t kh, Py_ssize_t kw, int sh, int sw):
    cdef Py_ssize_t ho = gy.shape[0], wo = gy.shape[1], cout = gy.shape[2]
    cdef Py_ssize_t cin = xp.shape[2]
    if floating is float:
        out = np.zeros((kh, kw, cin, cout), dtype=np.float32)
    else:
        out = np.zeros((kh, kw, cin, cout), dtype=np.float64)
    cdef floating[:, :, :, ::1] gk = out
    cdef Py_ssize_t h, w, u, v, c, o
    cdef floating x
    with nogil:
        for h in range(ho):
            for w in range(wo):
                for u in range(kh):
                    for v in range(kw):
                        for c in range(cin):
                            x = xp[h * sh + u, w * sw + v, c]
                            for o in range(cout):
                                gk[u, v, c, o] += x * gy[h, w, o]
    return out
