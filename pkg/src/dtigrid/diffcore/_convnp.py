"""Pure numpy patch kernels, the fallback for the compiled core."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, k, cols):
    """xp: padded input (B, C, Hp, Wp) -> cols (B*H*W, C*k*k), filled in place."""
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, C, H, W, k, k)
    b, c, h, w = win.shape[:4]
    cols[...] = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * k * k)


def col2im_add(gcols, k, gxp):
    """Scatter-add of patch gradients back onto the padded input gradient."""
    b, c = gxp.shape[:2]
    h = gxp.shape[2] - (k - 1)
    w = gxp.shape[3] - (k - 1)
    g = gcols.reshape(b, h, w, c, k, k)
    for ky in range(k):
        for kx in range(k):
            gxp[:, :, ky:ky + h, kx:kx + w] += g[:, :, :, :, ky, kx].transpose(
                0, 3, 1, 2
            )
