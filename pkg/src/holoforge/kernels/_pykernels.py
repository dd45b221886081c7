"""Pure numpy implementation of the small-kernel convolution primitives.

Same contract as the compiled module: NCHW float64, odd square kernels,
symmetric zero padding, output grid equal to the input grid.
"""

import numpy as np


def _pad(x, p):
    if p == 0:
        return np.asarray(x, dtype=np.float64)
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d_forward(x, w, b):
    n, _, h, wd = x.shape
    k = w.shape[2]
    xp = _pad(x, k // 2)
    out = np.empty((n, w.shape[0], h, wd))
    out[...] = np.asarray(b)[None, :, None, None]
    for ky in range(k):
        for kx in range(k):
            out += np.einsum("oc,nchw->nohw", w[:, :, ky, kx], xp[:, :, ky:ky + h, kx:kx + wd],
                             optimize=True)
    return out


def conv2d_backward_input(g, w):
    n, _, h, wd = g.shape
    k = w.shape[2]
    p = k // 2
    gxp = np.zeros((n, w.shape[1], h + 2 * p, wd + 2 * p))
    for ky in range(k):
        for kx in range(k):
            gxp[:, :, ky:ky + h, kx:kx + wd] += np.einsum("oc,nohw->nchw", w[:, :, ky, kx], g,
                                                          optimize=True)
    return gxp[:, :, p:p + h, p:p + wd] if p else gxp


def conv2d_backward_weight(x, g, k):
    _, _, h, wd = x.shape
    xp = _pad(x, k // 2)
    gw = np.empty((g.shape[1], x.shape[1], k, k))
    for ky in range(k):
        for kx in range(k):
            gw[:, :, ky, kx] = np.einsum("nohw,nchw->oc", g, xp[:, :, ky:ky + h, kx:kx + wd],
                                         optimize=True)
    return gw
