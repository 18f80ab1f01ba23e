"""Backend selection for the conv2d hot kernels.

Same-padding stride-1 cross-correlation as one im2col, a BLAS GEMM, and (in
the backward pass) a col2im scatter.  The patch extraction and scatter are
the memory-bound hot spots: the compiled Cython core handles them when it
imported cleanly; setting DTIGRID_PURE_PYTHON=1 (or a failed build) selects
the numpy fallback.  Both backends agree to floating-point roundoff.
"""

import os

import numpy as np

from ..errors import ShapeError

from . import _convnp

try:
    from . import _convcore
except ImportError:  # extension not built
    _convcore = None

if _convcore is not None and not os.environ.get("DTIGRID_PURE_PYTHON"):
    _impl = _convcore
    BACKEND = "compiled"
else:
    _impl = _convnp
    BACKEND = "numpy"


def _check(x, w):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects 4D input and kernels")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"input channels {x.shape[1]} != kernel channels {w.shape[1]}"
        )
    k = w.shape[2]
    if k != w.shape[3] or k % 2 == 0:
        raise ShapeError("kernel must be square with odd size")
    if x.shape[2] < k or x.shape[3] < k:
        raise ShapeError("spatial dims smaller than kernel")


def conv2d_forward(x, w, b):
    """x: (B, C, H, W); w: (O, C, k, k); b: (O,).

    Returns (y, cache); the cache carries the patch matrix for the backward
    pass so im2col runs once per step.
    """
    _check(x, w)
    o, c, k, _ = w.shape
    bsz, _, h, ww = x.shape
    p = k // 2
    if p:
        xp = np.ascontiguousarray(np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))))
    else:
        xp = np.ascontiguousarray(x)
    cols = np.empty((bsz * h * ww, c * k * k))
    _impl.im2col(xp, k, cols)
    y = cols @ w.reshape(o, -1).T + b
    y = np.ascontiguousarray(y.reshape(bsz, h, ww, o).transpose(0, 3, 1, 2))
    return y, (cols, xp.shape, (bsz, h, ww))


def conv2d_backward(cache, w, gy):
    """Gradients w.r.t. input, kernels and bias; returns (gx, gw, gb)."""
    cols, xp_shape, (bsz, h, ww) = cache
    o, c, k, _ = w.shape
    p = k // 2
    gyf = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(bsz * h * ww, o)
    gb = gyf.sum(axis=0)
    gw = (gyf.T @ cols).reshape(o, c, k, k)
    gcols = np.ascontiguousarray(gyf @ w.reshape(o, -1))
    gxp = np.zeros(xp_shape)
    _impl.col2im_add(gcols, k, gxp)
    if p:
        gx = np.ascontiguousarray(gxp[:, :, p:-p, p:-p])
    else:
        gx = gxp
    return gx, gw, gb
