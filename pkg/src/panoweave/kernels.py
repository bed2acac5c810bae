"""Bilinear gather kernels — the hot inner loops of projection.

Two implementations share one contract:

* a NumPy fallback (always available), and
* a Cython extension (``panoweave._fastpath``) selected at import when
  the build produced it.

Both evaluate the same lerp sequence in float64 and cast to float32, and
the extension is compiled with FP contraction off, so the two paths
produce bit-identical output.  ``PANOWEAVE_KERNELS=numpy|fast`` forces a
backend; the default is ``auto``.

Coordinate convention: pixel centers at integer coordinates, so an
x-coordinate of -0.3 on a ring axis wraps to extent - 0.3.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from . import _fastpath as _fast
except ImportError:  # pure-Python install
    _fast = None

__all__ = [
    "bilinear_pano_sample",
    "bilinear_plane_sample",
    "bilinear_pano_sample_numpy",
    "bilinear_plane_sample_numpy",
    "active_backend",
    "have_fastpath",
]


def have_fastpath() -> bool:
    return _fast is not None


def active_backend() -> str:
    mode = os.environ.get("PANOWEAVE_KERNELS", "auto")
    if mode == "numpy":
        return "numpy"
    if mode == "fast":
        if _fast is None:
            raise RuntimeError("PANOWEAVE_KERNELS=fast but the extension is not built")
        return "fast"
    return "fast" if _fast is not None else "numpy"


def _prep(stack: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    stack = np.ascontiguousarray(stack, dtype=np.float32)
    if stack.ndim != 3:
        raise ValueError(f"stack must be (N, H, W), got {stack.shape}")
    xs = np.ascontiguousarray(xs, dtype=np.float64).ravel()
    ys = np.ascontiguousarray(ys, dtype=np.float64).ravel()
    if xs.shape != ys.shape:
        raise ValueError("x and y coordinate arrays differ in length")
    return stack, xs, ys


def bilinear_pano_sample_numpy(stack: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample (N,H,W) planes at fractional coords; x wraps, y clamps."""
    stack, xs, ys = _prep(stack, xs, ys)
    n, h, w = stack.shape
    xp = np.mod(xs, w)
    x0 = np.floor(xp)
    fx = xp - x0
    x0i = x0.astype(np.intp) % w
    x1i = (x0i + 1) % w
    yp = np.clip(ys, 0.0, float(h - 1))
    y0 = np.floor(yp)
    fy = yp - y0
    y0i = y0.astype(np.intp)
    y1i = np.minimum(y0i + 1, h - 1)
    v00 = stack[:, y0i, x0i].astype(np.float64)
    v01 = stack[:, y0i, x1i].astype(np.float64)
    v10 = stack[:, y1i, x0i].astype(np.float64)
    v11 = stack[:, y1i, x1i].astype(np.float64)
    top = v00 + (v01 - v00) * fx
    bot = v10 + (v11 - v10) * fx
    return (top + (bot - top) * fy).astype(np.float32)


def bilinear_plane_sample_numpy(stack: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample (N,h,w) planes at fractional coords; both axes clamp."""
    stack, xs, ys = _prep(stack, xs, ys)
    n, h, w = stack.shape
    xp = np.clip(xs, 0.0, float(w - 1))
    x0 = np.floor(xp)
    fx = xp - x0
    x0i = x0.astype(np.intp)
    x1i = np.minimum(x0i + 1, w - 1)
    yp = np.clip(ys, 0.0, float(h - 1))
    y0 = np.floor(yp)
    fy = yp - y0
    y0i = y0.astype(np.intp)
    y1i = np.minimum(y0i + 1, h - 1)
    v00 = stack[:, y0i, x0i].astype(np.float64)
    v01 = stack[:, y0i, x1i].astype(np.float64)
    v10 = stack[:, y1i, x0i].astype(np.float64)
    v11 = stack[:, y1i, x1i].astype(np.float64)
    top = v00 + (v01 - v00) * fx
    bot = v10 + (v11 - v10) * fx
    return (top + (bot - top) * fy).astype(np.float32)


def bilinear_pano_sample(stack: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    stack, xs, ys = _prep(stack, xs, ys)
    if active_backend() == "fast":
        out = np.empty((stack.shape[0], xs.size), dtype=np.float32)
        _fast.bilinear_pano_sample(stack, xs, ys, out)
        return out
    return bilinear_pano_sample_numpy(stack, xs, ys)


def bilinear_plane_sample(stack: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    stack, xs, ys = _prep(stack, xs, ys)
    if active_backend() == "fast":
        out = np.empty((stack.shape[0], xs.size), dtype=np.float32)
        _fast.bilinear_plane_sample(stack, xs, ys, out)
        return out
    return bilinear_plane_sample_numpy(stack, xs, ys)
