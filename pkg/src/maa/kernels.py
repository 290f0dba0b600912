"""Numeric hot kernels: differentiable bilinear resize and 3x3 conv lowering.

Each kernel ships in two flavours: a numba ``@njit`` loop version and a pure
numpy fallback. Selection happens once at import time via the ``MAA_BACKEND``
environment variable:

    MAA_BACKEND=numba   force numba (ImportError if unavailable)
    MAA_BACKEND=numpy   force the numpy fallback
    MAA_BACKEND=auto    numba if importable, numpy otherwise (default)

All kernels operate on float64 arrays and are deterministic (no threading).
"""

from __future__ import annotations

import os

import numpy as np

_MODE = os.environ.get("MAA_BACKEND", "auto").lower()
if _MODE not in ("auto", "numba", "numpy"):
    raise ValueError(f"MAA_BACKEND must be auto|numba|numpy, got {_MODE!r}")

if _MODE == "numpy":
    _HAVE_NUMBA = False
else:
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:
        if _MODE == "numba":
            raise
        _HAVE_NUMBA = False

USING_NUMBA = _HAVE_NUMBA


def backend_name() -> str:
    return "numba" if USING_NUMBA else "numpy"


def _axis_coords(n_in: int, n_out: int):
    """Source indices and weights for 1-D bilinear sampling.

    Uses the half-pixel-center convention, clamped at the border, so that
    n_out == n_in is an exact identity and constant inputs stay constant.
    """
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    w0 = 1.0 - w1
    return i0, i1, w0, w1


# ---------------------------------------------------------------------------
# numpy fallbacks

def _resize_fwd_np(img, iy0, iy1, wy0, wy1, ix0, ix1, wx0, wx1):
    wy0 = wy0[:, None]
    wy1 = wy1[:, None]
    top = img[:, iy0][:, :, ix0] * wx0 + img[:, iy0][:, :, ix1] * wx1
    bot = img[:, iy1][:, :, ix0] * wx0 + img[:, iy1][:, :, ix1] * wx1
    return top * wy0 + bot * wy1


def _resize_vjp_np(grad, h_in, w_in, iy0, iy1, wy0, wy1, ix0, ix1, wx0, wx1):
    c = grad.shape[0]
    out = np.zeros((c, h_in, w_in), dtype=np.float64)
    gy0 = grad * wy0[:, None]
    gy1 = grad * wy1[:, None]
    for corner_y, gy in ((iy0, gy0), (iy1, gy1)):
        for corner_x, wx in ((ix0, wx0), (ix1, wx1)):
            np.add.at(out, (slice(None), corner_y[:, None], corner_x[None, :]), gy * wx)
    return out


def _im2col3_np(x):
    b, c, h, w = x.shape
    xp = np.zeros((b, c, h + 2, w + 2), dtype=np.float64)
    xp[:, :, 1 : h + 1, 1 : w + 1] = x
    cols = np.empty((b, h * w, c * 9), dtype=np.float64)
    k = 0
    for ci in range(c):
        for dy in range(3):
            for dx in range(3):
                cols[:, :, k] = xp[:, ci, dy : dy + h, dx : dx + w].reshape(b, h * w)
                k += 1
    return cols


def _col2im3_np(cols, c, h, w):
    b = cols.shape[0]
    xp = np.zeros((b, c, h + 2, w + 2), dtype=np.float64)
    k = 0
    for ci in range(c):
        for dy in range(3):
            for dx in range(3):
                xp[:, ci, dy : dy + h, dx : dx + w] += cols[:, :, k].reshape(b, h, w)
                k += 1
    return xp[:, :, 1 : h + 1, 1 : w + 1]


# ---------------------------------------------------------------------------
# numba versions

if _HAVE_NUMBA:

    @njit(cache=True)
    def _resize_fwd_nb(img, iy0, iy1, wy0, wy1, ix0, ix1, wx0, wx1):  # pragma: no cover
        c = img.shape[0]
        h_out = iy0.shape[0]
        w_out = ix0.shape[0]
        out = np.empty((c, h_out, w_out), dtype=np.float64)
        for ci in range(c):
            for oy in range(h_out):
                y0 = iy0[oy]
                y1 = iy1[oy]
                a = wy0[oy]
                bw = wy1[oy]
                for ox in range(w_out):
                    top = img[ci, y0, ix0[ox]] * wx0[ox] + img[ci, y0, ix1[ox]] * wx1[ox]
                    bot = img[ci, y1, ix0[ox]] * wx0[ox] + img[ci, y1, ix1[ox]] * wx1[ox]
                    out[ci, oy, ox] = top * a + bot * bw
        return out

    @njit(cache=True)
    def _resize_vjp_nb(grad, h_in, w_in, iy0, iy1, wy0, wy1, ix0, ix1, wx0, wx1):  # pragma: no cover
        c = grad.shape[0]
        h_out = iy0.shape[0]
        w_out = ix0.shape[0]
        out = np.zeros((c, h_in, w_in), dtype=np.float64)
        for ci in range(c):
            for oy in range(h_out):
                y0 = iy0[oy]
                y1 = iy1[oy]
                a = wy0[oy]
                bw = wy1[oy]
                for ox in range(w_out):
                    g = grad[ci, oy, ox]
                    out[ci, y0, ix0[ox]] += g * a * wx0[ox]
                    out[ci, y0, ix1[ox]] += g * a * wx1[ox]
                    out[ci, y1, ix0[ox]] += g * bw * wx0[ox]
                    out[ci, y1, ix1[ox]] += g * bw * wx1[ox]
        return out

    @njit(cache=True)
    def _im2col3_nb(x):  # pragma: no cover
        b, c, h, w = x.shape
        cols = np.zeros((b, h * w, c * 9), dtype=np.float64)
        for bi in range(b):
            for y in range(h):
                for xx in range(w):
                    p = y * w + xx
                    for ci in range(c):
                        k = ci * 9
                        for dy in range(3):
                            sy = y + dy - 1
                            if sy < 0 or sy >= h:
                                k += 3
                                continue
                            for dx in range(3):
                                sx = xx + dx - 1
                                if 0 <= sx < w:
                                    cols[bi, p, k] = x[bi, ci, sy, sx]
                                k += 1
        return cols

    @njit(cache=True)
    def _col2im3_nb(cols, c, h, w):  # pragma: no cover
        b = cols.shape[0]
        out = np.zeros((b, c, h, w), dtype=np.float64)
        for bi in range(b):
            for y in range(h):
                for xx in range(w):
                    p = y * w + xx
                    for ci in range(c):
                        k = ci * 9
                        for dy in range(3):
                            sy = y + dy - 1
                            if sy < 0 or sy >= h:
                                k += 3
                                continue
                            for dx in range(3):
                                sx = xx + dx - 1
                                if 0 <= sx < w:
                                    out[bi, ci, sy, sx] += cols[bi, p, k]
                                k += 1
        return out


# ---------------------------------------------------------------------------
# public API

def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a (C, H, W) image with bilinear interpolation."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    _, h, w = img.shape
    if out_h == h and out_w == w:
        return img.copy()
    iy0, iy1, wy0, wy1 = _axis_coords(h, out_h)
    ix0, ix1, wx0, wx1 = _axis_coords(w, out_w)
    if USING_NUMBA:
        return _resize_fwd_nb(img, iy0, iy1, wy0, wy1, ix0, ix1, wx0, wx1)
    return _resize_fwd_np(img, iy0, iy1, wy0, wy1, ix0, ix1, wx0, wx1)


def bilinear_resize_vjp(grad_out: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Backpropagate a (C, out_h, out_w) cotangent through bilinear_resize."""
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
    _, out_h, out_w = grad_out.shape
    if out_h == in_h and out_w == in_w:
        return grad_out.copy()
    iy0, iy1, wy0, wy1 = _axis_coords(in_h, out_h)
    ix0, ix1, wx0, wx1 = _axis_coords(in_w, out_w)
    if USING_NUMBA:
        return _resize_vjp_nb(grad_out, in_h, in_w, iy0, iy1, wy0, wy1, ix0, ix1, wx0, wx1)
    return _resize_vjp_np(grad_out, in_h, in_w, iy0, iy1, wy0, wy1, ix0, ix1, wx0, wx1)


def im2col3(x: np.ndarray) -> np.ndarray:
    """Lower (B, C, H, W) to (B, H*W, C*9) patches for 3x3 conv, zero padding 1."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if USING_NUMBA:
        return _im2col3_nb(x)
    return _im2col3_np(x)


def col2im3(cols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    """Adjoint of im2col3: scatter-add (B, H*W, C*9) back to (B, C, H, W)."""
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    if USING_NUMBA:
        return _col2im3_nb(cols, c, h, w)
    return _col2im3_np(cols, c, h, w)
