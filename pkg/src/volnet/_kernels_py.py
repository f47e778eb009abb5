"""Pure-numpy volumetric kernels.

Reference implementations of the hot loops; ``_ckernels`` provides the same
functions compiled. All arrays are channels-last ``(B, D, H, W, C)``.

Convolution uses a 2x2x2 window with "same" padding of one voxel before
and none after on every spatial axis, so tap ``(kd, kh, kw)`` of output
voxel ``(d, h, w)`` reads input voxel ``(d + kd - 1, h + kh - 1, w + kw - 1)``.
"""
import numpy as np

TAPS = [(kd, kh, kw) for kd in range(2) for kh in range(2) for kw in range(2)]


def im2col3d(x):
    """Gather 2x2x2 neighbourhoods: ``(B, D, H, W, C) -> (B, D, H, W, 8*C)``."""
    b, d, h, w, c = x.shape
    xp = np.zeros((b, d + 1, h + 1, w + 1, c), dtype=x.dtype)
    xp[:, 1:, 1:, 1:] = x
    cols = np.empty((b, d, h, w, 8, c), dtype=x.dtype)
    for t, (kd, kh, kw) in enumerate(TAPS):
        cols[:, :, :, :, t] = xp[:, kd:kd + d, kh:kh + h, kw:kw + w]
    return cols.reshape(b, d, h, w, 8 * c)


def col2im3d(dcols, channels):
    """Adjoint of :func:`im2col3d` (scatter-add back onto the input grid)."""
    b, d, h, w, _ = dcols.shape
    dc = dcols.reshape(b, d, h, w, 8, channels)
    dxp = np.zeros((b, d + 1, h + 1, w + 1, channels), dtype=dcols.dtype)
    for t, (kd, kh, kw) in enumerate(TAPS):
        dxp[:, kd:kd + d, kh:kh + h, kw:kw + w] += dc[:, :, :, :, t]
    return np.ascontiguousarray(dxp[:, 1:, 1:, 1:])


def maxpool3d_forward(x):
    """2x2x2 / stride 2 max pool. Returns ``(out, argmax)``.

    ``argmax`` holds the window-local tap index 0..7 (row-major over
    ``kd, kh, kw``); ties resolve to the lowest index. Odd trailing extents
    are dropped.
    """
    b, d, h, w, c = x.shape
    od, oh, ow = d // 2, h // 2, w // 2
    win = x[:, :2 * od, :2 * oh, :2 * ow].reshape(b, od, 2, oh, 2, ow, 2, c)
    win = win.transpose(0, 1, 3, 5, 7, 2, 4, 6).reshape(b, od, oh, ow, c, 8)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int8)


def maxpool3d_backward(gout, arg, in_shape):
    b, d, h, w, c = in_shape
    od, oh, ow = gout.shape[1:4]
    gwin = np.zeros((b, od, oh, ow, c, 8), dtype=gout.dtype)
    np.put_along_axis(gwin, arg.astype(np.intp)[..., None], gout[..., None], axis=-1)
    gwin = gwin.reshape(b, od, oh, ow, c, 2, 2, 2).transpose(0, 1, 5, 2, 6, 3, 7, 4)
    gin = np.zeros(in_shape, dtype=gout.dtype)
    gin[:, :2 * od, :2 * oh, :2 * ow] = gwin.reshape(b, 2 * od, 2 * oh, 2 * ow, c)
    return gin
