"""Numba-compiled convolution kernels.

Shifted-window formulation: the kernel taps (ci, i, j) are the outer loops
with the weight hoisted to a scalar, and the output plane (oy, ox) is the
inner pair, so the innermost loop runs over contiguous memory and
vectorizes. Loop order is fixed and no fastmath is used, keeping results
deterministic run to run.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(x, w, b):
    n, c, h, ww = x.shape
    f = w.shape[0]
    kh = w.shape[2]
    kw = w.shape[3]
    oh = h - kh + 1
    ow = ww - kw + 1
    y = np.empty((n, f, oh, ow), dtype=np.float64)
    for ni in range(n):
        for fi in range(f):
            out = y[ni, fi]
            for oy in range(oh):
                for ox in range(ow):
                    out[oy, ox] = b[fi]
            for ci in range(c):
                plane = x[ni, ci]
                for i in range(kh):
                    for j in range(kw):
                        wv = w[fi, ci, i, j]
                        for oy in range(oh):
                            row = plane[oy + i]
                            orow = out[oy]
                            for ox in range(ow):
                                orow[ox] += wv * row[ox + j]
    return y


@njit(cache=True)
def conv2d_backward(x, w, dy):
    n, c, h, ww = x.shape
    f = w.shape[0]
    kh = w.shape[2]
    kw = w.shape[3]
    oh = h - kh + 1
    ow = ww - kw + 1
    dx = np.zeros((n, c, h, ww), dtype=np.float64)
    dw = np.zeros((f, c, kh, kw), dtype=np.float64)
    db = np.zeros(f, dtype=np.float64)
    for ni in range(n):
        for fi in range(f):
            g = dy[ni, fi]
            acc = 0.0
            for oy in range(oh):
                grow = g[oy]
                for ox in range(ow):
                    acc += grow[ox]
            db[fi] += acc
            for ci in range(c):
                plane = x[ni, ci]
                dplane = dx[ni, ci]
                for i in range(kh):
                    for j in range(kw):
                        wv = w[fi, ci, i, j]
                        acc = 0.0
                        for oy in range(oh):
                            grow = g[oy]
                            row = plane[oy + i]
                            drow = dplane[oy + i]
                            for ox in range(ow):
                                gv = grow[ox]
                                acc += gv * row[ox + j]
                                drow[ox + j] += gv * wv
                        dw[fi, ci, i, j] += acc
    return dx, dw, db
