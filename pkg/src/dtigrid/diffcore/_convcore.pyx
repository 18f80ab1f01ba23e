# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch-extraction kernels for same-padding conv2d (stride 1).

The GEMM itself goes through BLAS on the caller side; these kernels do the
memory-bound im2col / col2im work that dominates the pure-numpy path.
"""

import numpy as np


def im2col(double[:, :, :, ::1] xp, Py_ssize_t k, double[:, ::1] cols):
    """xp: padded input (B, C, H+2p, W+2p) -> cols (B*H*W, C*k*k)."""
    cdef Py_ssize_t B = xp.shape[0], C = xp.shape[1]
    cdef Py_ssize_t H = xp.shape[2] - (k - 1), W = xp.shape[3] - (k - 1)
    cdef Py_ssize_t n, c, ky, kx, i, j, r, base
    for n in range(B):
        for i in range(H):
            for j in range(W):
                r = (n * H + i) * W + j
                base = 0
                for c in range(C):
                    for ky in range(k):
                        for kx in range(k):
                            cols[r, base + ky * k + kx] = xp[n, c, i + ky, j + kx]
                    base += k * k


def col2im_add(double[:, ::1] gcols, Py_ssize_t k, double[:, :, :, ::1] gxp):
    """Scatter-add of patch gradients back onto the padded input gradient."""
    cdef Py_ssize_t B = gxp.shape[0], C = gxp.shape[1]
    cdef Py_ssize_t H = gxp.shape[2] - (k - 1), W = gxp.shape[3] - (k - 1)
    cdef Py_ssize_t n, c, ky, kx, i, j, r, base
    for n in range(B):
        for i in range(H):
            for j in range(W):
                r = (n * H + i) * W + j
                base = 0
                for c in range(C):
                    for ky in range(k):
                        for kx in range(k):
                            gxp[n, c, i + ky, j + kx] += gcols[r, base + ky * k + kx]
                    base += k * k
