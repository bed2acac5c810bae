# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled bilinear gather kernels.

Must stay arithmetically identical to the NumPy fallback in kernels.py:
float64 lerp sequence, float32 store, no FP contraction (see setup.py).
"""

from libc.math cimport floor, fmod

import numpy as np
cimport numpy as cnp


def bilinear_pano_sample(cnp.float32_t[:, :, ::1] stack,
                         cnp.float64_t[::1] xs,
                         cnp.float64_t[::1] ys,
                         cnp.float32_t[:, ::1] out):
    """Sample with x wrap / y clamp into preallocated (N, M) out."""
    cdef Py_ssize_t n = stack.shape[0]
    cdef Py_ssize_t h = stack.shape[1]
    cdef Py_ssize_t w = stack.shape[2]
    cdef Py_ssize_t m = xs.shape[0]
    cdef Py_ssize_t i, k
    cdef double xp, yp, fx, fy, top, bot
    cdef Py_ssize_t x0, x1, y0, y1
    cdef double v00, v01, v10, v11

    for k in range(m):
        xp = fmod(xs[k], <double>w)             # np.mod semantics, bit-exact
        if xp != 0.0 and xp < 0.0:
            xp = xp + w
        x0 = <Py_ssize_t>floor(xp)
        fx = xp - <double>x0
        x0 = x0 % w
        x1 = (x0 + 1) % w

        yp = ys[k]
        if yp < 0.0:
            yp = 0.0
        elif yp > h - 1:
            yp = h - 1
        y0 = <Py_ssize_t>floor(yp)
        fy = yp - y0
        y1 = y0 + 1
        if y1 > h - 1:
            y1 = h - 1

        for i in range(n):
            v00 = stack[i, y0, x0]
            v01 = stack[i, y0, x1]
            v10 = stack[i, y1, x0]
            v11 = stack[i, y1, x1]
            top = v00 + (v01 - v00) * fx
            bot = v10 + (v11 - v10) * fx
            out[i, k] = <float>(top + (bot - top) * fy)


def bilinear_plane_sample(cnp.float32_t[:, :, ::1] stack,
                          cnp.float64_t[::1] xs,
                          cnp.float64_t[::1] ys,
                          cnp.float32_t[:, ::1] out):
    """Sample with clamp on both axes into preallocated (N, M) out."""
    cdef Py_ssize_t n = stack.shape[0]
    cdef Py_ssize_t h = stack.shape[1]
    cdef Py_ssize_t w = stack.shape[2]
    cdef Py_ssize_t m = xs.shape[0]
    cdef Py_ssize_t i, k
    cdef double xp, yp, fx, fy, top, bot
    cdef Py_ssize_t x0, x1, y0, y1
    cdef double v00, v01, v10, v11

    for k in range(m):
        xp = xs[k]
        if xp < 0.0:
            xp = 0.0
        elif xp > w - 1:
            xp = w - 1
        x0 = <Py_ssize_t>floor(xp)
        fx = xp - x0
        x1 = x0 + 1
        if x1 > w - 1:
            x1 = w - 1

        yp = ys[k]
        if yp < 0.0:
            yp = 0.0
        elif yp > h - 1:
            yp = h - 1
        y0 = <Py_ssize_t>floor(yp)
        fy = yp - y0
        y1 = y0 + 1
        if y1 > h - 1:
            y1 = h - 1

        for i in range(n):
            v00 = stack[i, y0, x0]
            v01 = stack[i, y0, x1]
            v10 = stack[i, y1, x0]
            v11 = stack[i, y1, x1]
            top = v00 + (v01 - v00) * fx
            bot = v10 + (v11 - v10) * fx
            out[i, k] = <float>(top + (bot - top) * fy)
