"""Pure-numpy convolution kernels (im2col / col2im), the fallback backend."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _cols(x, kh, kw):
    # (n,c,h,w) -> (n*oh*ow, c*kh*kw) patch matrix
    n, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)


def conv2d_forward(x, w, b):
    """Valid cross-correlation, stride 1. x:(n,c,h,w) w:(f,c,kh,kw) b:(f,)."""
    n, c, h, ww = x.shape
    f, _, kh, kw = w.shape
    oh, ow = h - kh + 1, ww - kw + 1
    y = _cols(x, kh, kw) @ w.reshape(f, -1).T + b
    return np.ascontiguousarray(y.reshape(n, oh, ow, f).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, dy):
    """Gradients of conv2d_forward. Returns (dx, dw, db)."""
    n, c, h, ww = x.shape
    f, _, kh, kw = w.shape
    oh, ow = h - kh + 1, ww - kw + 1
    dy2 = dy.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
    dw = (dy2.T @ _cols(x, kh, kw)).reshape(f, c, kh, kw)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ w.reshape(f, -1)).reshape(n, oh, ow, c, kh, kw)
    dx = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + oh, j:j + ow] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx, dw, db
