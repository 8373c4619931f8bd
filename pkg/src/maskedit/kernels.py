"""3x3 convolution kernels, the hot inner loops of the denoisers.

Each public function dispatches between a numba-compiled loop kernel and a
vectorized numpy fallback, selected once at import by ``maskedit.accel``.
Both paths are single-threaded and IEEE-strict (no fastmath), so a given
path is bit-deterministic run to run. Arrays are float64, layout
(batch, channels, height, width); padding is zero, stride 1, "same" size.
"""

from __future__ import annotations

import numpy as np

from .accel import USING_NUMBA, njit


@njit(cache=True)
def _conv3x3_fwd_loop(xp, w, b, out):
    batch, cin, hp, wp = xp.shape
    cout = w.shape[0]
    h = hp - 2
    wd = wp - 2
    for n in range(batch):
        for o in range(cout):
            for y in range(h):
                for x in range(wd):
                    acc = b[o]
                    for c in range(cin):
                        for dy in range(3):
                            for dx in range(3):
                                acc += w[o, c, dy, dx] * xp[n, c, y + dy, x + dx]
                    out[n, o, y, x] = acc


@njit(cache=True)
def _conv3x3_bwd_loop(xp, w, gout, gxp, gw, gb):
    batch, cin, hp, wp = xp.shape
    cout = w.shape[0]
    h = hp - 2
    wd = wp - 2
    for n in range(batch):
        for o in range(cout):
            for y in range(h):
                for x in range(wd):
                    g = gout[n, o, y, x]
                    gb[o] += g
                    for c in range(cin):
                        for dy in range(3):
                            for dx in range(3):
                                gw[o, c, dy, dx] += g * xp[n, c, y + dy, x + dx]
                                gxp[n, c, y + dy, x + dx] += g * w[o, c, dy, dx]


def _pad(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """out[n,o] = b[o] + sum_c w[o,c] * x[n,c] with zero padding."""
    batch, _, h, wd = x.shape
    cout = w.shape[0]
    xp = np.ascontiguousarray(_pad(x))
    if USING_NUMBA:
        out = np.empty((batch, cout, h, wd))
        _conv3x3_fwd_loop(xp, np.ascontiguousarray(w), np.ascontiguousarray(b), out)
        return out
    out = np.zeros((batch, cout, h, wd))
    for dy in range(3):
        for dx in range(3):
            out += np.einsum(
                "oc,nchw->nohw", w[:, :, dy, dx], xp[:, :, dy:dy + h, dx:dx + wd],
                optimize=True,
            )
    out += b[None, :, None, None]
    return out


def conv3x3_backward(
    x: np.ndarray, w: np.ndarray, gout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (gx, gw, gb) of conv3x3_forward for upstream grad ``gout``."""
    batch, cin, h, wd = x.shape
    xp = np.ascontiguousarray(_pad(x))
    if USING_NUMBA:
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        gb = np.zeros(w.shape[0])
        _conv3x3_bwd_loop(
            xp, np.ascontiguousarray(w), np.ascontiguousarray(gout), gxp, gw, gb
        )
        return gxp[:, :, 1:-1, 1:-1], gw, gb
    gw = np.empty_like(w)
    gxp = np.zeros_like(xp)
    for dy in range(3):
        for dx in range(3):
            xs = xp[:, :, dy:dy + h, dx:dx + wd]
            gw[:, :, dy, dx] = np.einsum("nohw,nchw->oc", gout, xs, optimize=True)
            gxp[:, :, dy:dy + h, dx:dx + wd] += np.einsum(
                "oc,nohw->nchw", w[:, :, dy, dx], gout, optimize=True
            )
    gb = gout.sum(axis=(0, 2, 3))
    return gxp[:, :, 1:-1, 1:-1], gw, gb


def link1x1_forward(f: np.ndarray, lw: np.ndarray, lb: np.ndarray) -> np.ndarray:
    """Per-position channel mix: out[n,o] = lb[o] + sum_c lw[o,c] * f[n,c]."""
    out = np.einsum("oc,nchw->nohw", lw, f, optimize=True)
    out += lb[None, :, None, None]
    return out


def link1x1_backward(
    f: np.ndarray, lw: np.ndarray, gout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    gf = np.einsum("oc,nohw->nchw", lw, gout, optimize=True)
    glw = np.einsum("nohw,nchw->oc", gout, f, optimize=True)
    glb = gout.sum(axis=(0, 2, 3))
    return gf, glw, glb
