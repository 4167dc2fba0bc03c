"""Hot inner loops: patch extraction for convolution and bilinear point sampling.

Each kernel exists twice, as a numba ``@njit`` loop nest and as a pure-numpy
routine. ``STAA_NUMBA=0`` in the environment (or a missing numba install)
selects the numpy path; :func:`set_backend` switches at runtime. Both paths
share the replicate-padding and clamping conventions, so they agree to
rounding error.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_backend = "numba" if HAVE_NUMBA and os.environ.get("STAA_NUMBA", "1") != "0" else "numpy"


def backend() -> str:
    return _backend


def set_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    prev, _backend = _backend, name
    return prev


def conv_out_extent(n: int, stride: int) -> int:
    return -(-n // stride)


# ---------------------------------------------------------------------------
# numpy implementations


def _im2col_numpy(x, ksize, stride):
    kt, kh, kw = ksize
    r, sh, sw = stride
    N, C, T, H, W = x.shape
    To, Ho, Wo = conv_out_extent(T, r), conv_out_extent(H, sh), conv_out_extent(W, sw)
    pad = ((0, 0), (0, 0), (kt // 2, kt // 2), (kh // 2, kh // 2), (kw // 2, kw // 2))
    xp = np.pad(x, pad, mode="edge") if (kt > 1 or kh > 1 or kw > 1) else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))
    win = win[:, :, ::r, ::sh, ::sw][:, :, :To, :Ho, :Wo]
    # (N, C, To, Ho, Wo, kt, kh, kw) -> (N, To, Ho, Wo, C, kt, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7))
    return cols.reshape(N * To * Ho * Wo, C * kt * kh * kw)


def _fold_pad(g, axis, pad, n):
    """Adjoint of edge padding along one axis."""
    if pad == 0:
        return g
    core = np.take(g, np.arange(pad, pad + n), axis=axis)
    lo = np.take(g, np.arange(0, pad), axis=axis).sum(axis=axis)
    hi = np.take(g, np.arange(pad + n, 2 * pad + n), axis=axis).sum(axis=axis)
    idx0 = [slice(None)] * g.ndim
    idx0[axis] = 0
    idx1 = [slice(None)] * g.ndim
    idx1[axis] = n - 1
    core[tuple(idx0)] += lo
    core[tuple(idx1)] += hi
    return core


def _col2im_numpy(gcols, xshape, ksize, stride):
    kt, kh, kw = ksize
    r, sh, sw = stride
    N, C, T, H, W = xshape
    To, Ho, Wo = conv_out_extent(T, r), conv_out_extent(H, sh), conv_out_extent(W, sw)
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    g = gcols.reshape(N, To, Ho, Wo, C, kt, kh, kw).transpose(0, 4, 5, 6, 7, 1, 2, 3)
    gp = np.zeros((N, C, T + 2 * pt, H + 2 * ph, W + 2 * pw), dtype=gcols.dtype)
    for i in range(kt):
        for j in range(kh):
            for k in range(kw):
                gp[:, :, i:i + r * To:r, j:j + sh * Ho:sh, k:k + sw * Wo:sw] += g[:, :, i, j, k]
    gp = _fold_pad(gp, 2, pt, T)
    gp = _fold_pad(gp, 3, ph, H)
    return _fold_pad(gp, 4, pw, W)


def _corners_numpy(H, W, py, px):
    yc = np.clip(py, 0.0, H - 1.0)
    xc = np.clip(px, 0.0, W - 1.0)
    y0 = np.minimum(np.floor(yc).astype(np.int64), max(H - 2, 0))
    x0 = np.minimum(np.floor(xc).astype(np.int64), max(W - 2, 0))
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    wy = yc - y0
    wx = xc - x0
    return y0, y1, x0, x1, wy, wx


def _sample_numpy(x, py, px):
    N, C, H, W = x.shape
    y0, y1, x0, x1, wy, wx = _corners_numpy(H, W, py, px)
    flat = x.reshape(N, C, H * W)
    out = np.empty((N, py.shape[1], C), dtype=x.dtype)
    for n in range(N):
        f = flat[n]
        v00 = f[:, y0[n] * W + x0[n]]
        v01 = f[:, y0[n] * W + x1[n]]
        v10 = f[:, y1[n] * W + x0[n]]
        v11 = f[:, y1[n] * W + x1[n]]
        a, b = wy[n], wx[n]
        val = (1 - a) * ((1 - b) * v00 + b * v01) + a * ((1 - b) * v10 + b * v11)
        out[n] = val.T
    return out


def _sample_backward_numpy(gv, x, py, px):
    N, C, H, W = x.shape
    y0, y1, x0, x1, wy, wx = _corners_numpy(H, W, py, px)
    iny = (py >= 0.0) & (py <= H - 1.0) & (H > 1)
    inx = (px >= 0.0) & (px <= W - 1.0) & (W > 1)
    flat = x.reshape(N, C, H * W)
    gx = np.zeros((N, C, H * W), dtype=x.dtype)
    gpy = np.zeros(py.shape, dtype=x.dtype)
    gpx = np.zeros(px.shape, dtype=x.dtype)
    for n in range(N):
        f = flat[n]
        i00, i01 = y0[n] * W + x0[n], y0[n] * W + x1[n]
        i10, i11 = y1[n] * W + x0[n], y1[n] * W + x1[n]
        a, b = wy[n], wx[n]
        g = gv[n].T  # (C, P)
        for idx, wgt in ((i00, (1 - a) * (1 - b)), (i01, (1 - a) * b), (i10, a * (1 - b)), (i11, a * b)):
            contrib = g * wgt
            for c in range(C):
                gx[n, c] += np.bincount(idx, weights=contrib[c], minlength=H * W).astype(x.dtype)
        v00, v01, v10, v11 = f[:, i00], f[:, i01], f[:, i10], f[:, i11]
        dy = (1 - b) * (v10 - v00) + b * (v11 - v01)
        dx = (1 - a) * (v01 - v00) + a * (v11 - v10)
        gpy[n] = np.where(iny[n], (g * dy).sum(axis=0), 0.0)
        gpx[n] = np.where(inx[n], (g * dx).sum(axis=0), 0.0)
    return gx.reshape(N, C, H, W), gpy, gpx


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _im2col_nb(x, kt, kh, kw, r, sh, sw, out):
        N, C, T, H, W = x.shape
        To = (T + r - 1) // r
        Ho = (H + sh - 1) // sh
        Wo = (W + sw - 1) // sw
        pt, ph, pw = kt // 2, kh // 2, kw // 2
        m = 0
        for n in range(N):
            for t in range(To):
                for h in range(Ho):
                    for w in range(Wo):
                        col = 0
                        for c in range(C):
                            for i in range(kt):
                                ti = min(max(r * t + i - pt, 0), T - 1)
                                for j in range(kh):
                                    hj = min(max(sh * h + j - ph, 0), H - 1)
                                    for k in range(kw):
                                        wk = min(max(sw * w + k - pw, 0), W - 1)
                                        out[m, col] = x[n, c, ti, hj, wk]
                                        col += 1
                        m += 1

    @numba.njit(cache=True)
    def _col2im_nb(g, kt, kh, kw, r, sh, sw, gx):
        N, C, T, H, W = gx.shape
        To = (T + r - 1) // r
        Ho = (H + sh - 1) // sh
        Wo = (W + sw - 1) // sw
        pt, ph, pw = kt // 2, kh // 2, kw // 2
        m = 0
        for n in range(N):
            for t in range(To):
                for h in range(Ho):
                    for w in range(Wo):
                        col = 0
                        for c in range(C):
                            for i in range(kt):
                                ti = min(max(r * t + i - pt, 0), T - 1)
                                for j in range(kh):
                                    hj = min(max(sh * h + j - ph, 0), H - 1)
                                    for k in range(kw):
                                        wk = min(max(sw * w + k - pw, 0), W - 1)
                                        gx[n, c, ti, hj, wk] += g[m, col]
                                        col += 1
                        m += 1

    @numba.njit(cache=True, inline="always")
    def _corner(p, n):
        pc = min(max(p, 0.0), n - 1.0)
        i0 = min(int(np.floor(pc)), max(n - 2, 0))
        i1 = min(i0 + 1, n - 1)
        return i0, i1, pc - i0

    @numba.njit(cache=True)
    def _sample_nb(x, py, px, out):
        N, C, H, W = x.shape
        P = py.shape[1]
        for n in range(N):
            for p in range(P):
                y0, y1, a = _corner(py[n, p], H)
                x0, x1, b = _corner(px[n, p], W)
                w00 = (1 - a) * (1 - b)
                w01 = (1 - a) * b
                w10 = a * (1 - b)
                w11 = a * b
                for c in range(C):
                    out[n, p, c] = (w00 * x[n, c, y0, x0] + w01 * x[n, c, y0, x1]
                                    + w10 * x[n, c, y1, x0] + w11 * x[n, c, y1, x1])

    @numba.njit(cache=True)
    def _sample_backward_nb(gv, x, py, px, gx, gpy, gpx):
        N, C, H, W = x.shape
        P = py.shape[1]
        for n in range(N):
            for p in range(P):
                yr = py[n, p]
                xr = px[n, p]
                y0, y1, a = _corner(yr, H)
                x0, x1, b = _corner(xr, W)
                w00 = (1 - a) * (1 - b)
                w01 = (1 - a) * b
                w10 = a * (1 - b)
                w11 = a * b
                sy = 0.0
                sx = 0.0
                for c in range(C):
                    g = gv[n, p, c]
                    gx[n, c, y0, x0] += g * w00
                    gx[n, c, y0, x1] += g * w01
                    gx[n, c, y1, x0] += g * w10
                    gx[n, c, y1, x1] += g * w11
                    v00 = x[n, c, y0, x0]
                    v01 = x[n, c, y0, x1]
                    v10 = x[n, c, y1, x0]
                    v11 = x[n, c, y1, x1]
                    sy += g * ((1 - b) * (v10 - v00) + b * (v11 - v01))
                    sx += g * ((1 - a) * (v01 - v00) + a * (v11 - v10))
                if H > 1 and 0.0 <= yr <= H - 1.0:
                    gpy[n, p] = sy
                if W > 1 and 0.0 <= xr <= W - 1.0:
                    gpx[n, p] = sx


# ---------------------------------------------------------------------------
# dispatch


def im2col3d(x: np.ndarray, ksize, stride) -> np.ndarray:
    """Replicate-padded patch matrix of shape ``(N*T'*H'*W', C*kt*kh*kw)``."""
    if _backend == "numpy":
        return _im2col_numpy(x, ksize, stride)
    N, C, T, H, W = x.shape
    M = N * conv_out_extent(T, stride[0]) * conv_out_extent(H, stride[1]) * conv_out_extent(W, stride[2])
    out = np.empty((M, C * ksize[0] * ksize[1] * ksize[2]), dtype=x.dtype)
    _im2col_nb(np.ascontiguousarray(x), *ksize, *stride, out)
    return out


def col2im3d(gcols: np.ndarray, xshape, ksize, stride) -> np.ndarray:
    """Adjoint of :func:`im2col3d`: scatter-add patch gradients onto the input."""
    if _backend == "numpy":
        return _col2im_numpy(gcols, xshape, ksize, stride)
    gx = np.zeros(xshape, dtype=gcols.dtype)
    _col2im_nb(np.ascontiguousarray(gcols), *ksize, *stride, gx)
    return gx


def sample_points(x: np.ndarray, py: np.ndarray, px: np.ndarray) -> np.ndarray:
    """Bilinear samples of ``x (N,C,H,W)`` at clamped points ``(N,P)``; returns ``(N,P,C)``."""
    py = py.astype(x.dtype, copy=False)
    px = px.astype(x.dtype, copy=False)
    if _backend == "numpy":
        return _sample_numpy(x, py, px)
    out = np.empty((x.shape[0], py.shape[1], x.shape[1]), dtype=x.dtype)
    _sample_nb(np.ascontiguousarray(x), np.ascontiguousarray(py), np.ascontiguousarray(px), out)
    return out


def sample_points_backward(gv, x, py, px):
    """Gradients of :func:`sample_points` w.r.t. ``x``, ``py`` and ``px``.

    Coordinates that were clamped receive zero gradient.
    """
    py = py.astype(x.dtype, copy=False)
    px = px.astype(x.dtype, copy=False)
    if _backend == "numpy":
        return _sample_backward_numpy(gv, x, py, px)
    gx = np.zeros(x.shape, dtype=x.dtype)
    gpy = np.zeros(py.shape, dtype=x.dtype)
    gpx = np.zeros(px.shape, dtype=x.dtype)
    _sample_backward_nb(np.ascontiguousarray(gv), np.ascontiguousarray(x),
                        np.ascontiguousarray(py), np.ascontiguousarray(px), gx, gpy, gpx)
    return gx, gpy, gpx
