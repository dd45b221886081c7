# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled direct-loop kernels for small-kernel 2D convolution.

All arrays are float64 in NCHW layout; kernels are square and odd sized with
symmetric zero padding so the output grid equals the input grid. The tiled
micro-kernels live in ``conv_tile.h``; this module packs operands and strips
tile padding.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef extern from "conv_tile.h" nogil:
    int HF_OB
    int HF_XB
    void hf_conv_fwd(const double* xp, Py_ssize_t N, Py_ssize_t C, Py_ssize_t Hp,
                     Py_ssize_t Wp, const double* wb, const double* bias, Py_ssize_t nob,
                     Py_ssize_t K, Py_ssize_t H, Py_ssize_t Wt, double* out)
    void hf_conv_bwd_weight(const double* xp, const double* g, Py_ssize_t N, Py_ssize_t C,
                            Py_ssize_t Hp, Py_ssize_t Wp, Py_ssize_t nob, Py_ssize_t K,
                            Py_ssize_t H, Py_ssize_t Wt, double* gw)
    void hf_conv_bwd_weight3(const double* xp, const double* g, Py_ssize_t N, Py_ssize_t C,
                             Py_ssize_t Hp, Py_ssize_t Wp, Py_ssize_t nob, Py_ssize_t H,
                             Py_ssize_t Wt, double* gw)


cdef inline Py_ssize_t _ceil_to(Py_ssize_t v, Py_ssize_t m) noexcept:
    return ((v + m - 1) // m) * m


def _padded_input(x, int p, Py_ssize_t wt):
    # zero-padded copy wide enough for whole column tiles
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * p, wt + 2 * p), dtype=np.float64)
    xp[:, :, p:p + h, p:p + w] = x
    return xp


def conv2d_forward(x, w, b):
    """out[n, o] = b[o] + sum_c corr(x[n, c], w[o, c])."""
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], K = w.shape[2]
    cdef int p = <int>(K // 2)
    cdef Py_ssize_t Wt = _ceil_to(W, HF_XB), Ot = _ceil_to(O, HF_OB)
    cdef Py_ssize_t nob = Ot // HF_OB
    cdef double[:, :, :, ::1] xp = _padded_input(x, p, Wt)
    wpad = np.zeros((Ot, C, K, K), dtype=np.float64)
    wpad[:O] = w
    cdef double[:, :, :, :, ::1] wb = np.ascontiguousarray(
        wpad.reshape(nob, HF_OB, C, K, K).transpose(0, 2, 3, 4, 1))
    bpad = np.zeros(Ot, dtype=np.float64)
    bpad[:O] = b
    cdef double[::1] bv = bpad
    out_arr = np.empty((N, Ot, H, Wt), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    with nogil:
        hf_conv_fwd(&xp[0, 0, 0, 0], N, C, xp.shape[2], xp.shape[3], &wb[0, 0, 0, 0, 0],
                    &bv[0], nob, K, H, Wt, &out[0, 0, 0, 0])
    if Ot == O and Wt == W:
        return out_arr
    return np.ascontiguousarray(out_arr[:, :O, :, :W])


def conv2d_backward_input(g, w):
    """Adjoint of conv2d_forward with respect to the input.

    For odd kernels with same-padding this is a forward correlation with the
    spatially flipped, channel-transposed kernel.
    """
    wf = np.ascontiguousarray(np.asarray(w)[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d_forward(g, wf, np.zeros(wf.shape[0]))


def conv2d_backward_weight(x, g, int K):
    """Gradient of conv2d_forward with respect to the (O, C, K, K) weights."""
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = g.shape[1]
    cdef int p = K // 2
    cdef Py_ssize_t Wt = _ceil_to(W, HF_XB), Ot = _ceil_to(O, HF_OB)
    cdef double[:, :, :, ::1] xp = _padded_input(x, p, Wt)
    gp = np.zeros((N, Ot, H, Wt), dtype=np.float64)
    gp[:, :O, :, :W] = g
    cdef double[:, :, :, ::1] gv = gp
    gw_arr = np.empty((Ot, C, K, K), dtype=np.float64)
    cdef double[:, :, :, ::1] gw = gw_arr
    with nogil:
        if K == 3:
            hf_conv_bwd_weight3(&xp[0, 0, 0, 0], &gv[0, 0, 0, 0], N, C, xp.shape[2],
                                xp.shape[3], Ot // HF_OB, H, Wt, &gw[0, 0, 0, 0])
        else:
            hf_conv_bwd_weight(&xp[0, 0, 0, 0], &gv[0, 0, 0, 0], N, C, xp.shape[2],
                               xp.shape[3], Ot // HF_OB, K, H, Wt, &gw[0, 0, 0, 0])
    return np.ascontiguousarray(gw_arr[:O])
