# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled volumetric kernels. Same contracts as ``_kernels_py``."""
import numpy as np
cimport cython

# below this channel count a pass per tap beats a pass per voxel
SMALL_C = 4

ctypedef fused real:
    float
    double


def _im2col_taps(const real[:, :, :, :, ::1] x, real[:, :, :, :, ::1] cols):
    cdef Py_ssize_t B = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3], C = x.shape[4]
    cdef Py_ssize_t b, d, h, w, c, kd, kh, kw, sd, sh, w0, tap, K = 8 * C
    cdef const real* src
    cdef real* dst
    cdef const real* xp = &x[0, 0, 0, 0, 0]
    cdef real* cp = &cols[0, 0, 0, 0, 0]
    # one pass per tap, like the numpy version, so inner runs stay linear in w
    with nogil:
        for kd in range(2):
            for kh in range(2):
                for kw in range(2):
                    tap = ((kd * 2 + kh) * 2 + kw) * C
                    w0 = 1 - kw
                    for b in range(B):
                        for d in range(D):
                            sd = d + kd - 1
                            for h in range(H):
                                sh = h + kh - 1
                                dst = cp + ((b * D + d) * H + h) * W * K + tap
                                if sd < 0 or sh < 0:
                                    for w in range(W):
                                        for c in range(C):
                                            dst[w * K + c] = 0
                                    continue
                                src = xp + ((b * D + sd) * H + sh) * W * C - (1 - kw) * C
                                if w0:
                                    for c in range(C):
                                        dst[c] = 0
                                if C == 1:
                                    for w in range(w0, W):
                                        dst[w * K] = src[w]
                                else:
                                    for w in range(w0, W):
                                        for c in range(C):
                                            dst[w * K + c] = src[w * C + c]


def _col2im_vox(const real[:, :, :, :, ::1] dcols, real[:, :, :, :, ::1] dx):
    cdef Py_ssize_t B = dx.shape[0], D = dx.shape[1], H = dx.shape[2], W = dx.shape[3], C = dx.shape[4]
    cdef Py_ssize_t b, d, h, w, c, kd, kh, kw, od, oh, ow, src, tap
    cdef const real* gp = &dcols[0, 0, 0, 0, 0]
    cdef real* out = &dx[0, 0, 0, 0, 0]
    # gather form: input voxel (d,h,w) receives tap (kd,kh,kw) of output voxel
    # (d-kd+1, h-kh+1, w-kw+1); fixed tap order keeps the sum deterministic
    with nogil:
        for b in range(B):
            for d in range(D):
                for h in range(H):
                    for w in range(W):
                        for c in range(C):
                            out[c] = 0
                        tap = 0
                        for kd in range(2):
                            od = d - kd + 1
                            for kh in range(2):
                                oh = h - kh + 1
                                for kw in range(2):
                                    ow = w - kw + 1
                                    if od < D and oh < H and ow < W:
                                        src = (((b * D + od) * H + oh) * W + ow) * 8 * C + tap
                                        for c in range(C):
                                            out[c] += gp[src + c]
                                    tap += C
                        out += C


def _im2col_vox(const real[:, :, :, :, ::1] x, real[:, :, :, :, ::1] cols):
    cdef Py_ssize_t B = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3], C = x.shape[4]
    cdef Py_ssize_t b, d, h, w, c, kd, kh, kw, sd, sh, sw, src
    cdef const real* xp = &x[0, 0, 0, 0, 0]
    cdef real* row = &cols[0, 0, 0, 0, 0]
    with nogil:
        for b in range(B):
            for d in range(D):
                for h in range(H):
                    for w in range(W):
                        for kd in range(2):
                            sd = d + kd - 1
                            for kh in range(2):
                                sh = h + kh - 1
                                for kw in range(2):
                                    sw = w + kw - 1
                                    if sd < 0 or sh < 0 or sw < 0:
                                        for c in range(C):
                                            row[c] = 0
                                    else:
                                        src = (((b * D + sd) * H + sh) * W + sw) * C
                                        for c in range(C):
                                            row[c] = xp[src + c]
                                    row += C


def _col2im_taps(const real[:, :, :, :, ::1] dcols, real[:, :, :, :, ::1] dx):
    cdef Py_ssize_t B = dx.shape[0], D = dx.shape[1], H = dx.shape[2], W = dx.shape[3], C = dx.shape[4]
    cdef Py_ssize_t b, d, h, w, c, kd, kh, kw, od, oh, wn, tap, K = 8 * C
    cdef const real* src
    cdef real* dst
    cdef const real* gp = &dcols[0, 0, 0, 0, 0]
    cdef real* out = &dx[0, 0, 0, 0, 0]
    # taps accumulate in the same fixed order as the per-voxel gather
    with nogil:
        for c in range(B * D * H * W * C):
            out[c] = 0
        for kd in range(2):
            for kh in range(2):
                for kw in range(2):
                    tap = ((kd * 2 + kh) * 2 + kw) * C
                    wn = W - 1 + kw
                    for b in range(B):
                        for d in range(D):
                            od = d - kd + 1
                            if od >= D:
                                continue
                            for h in range(H):
                                oh = h - kh + 1
                                if oh >= H:
                                    continue
                                dst = out + ((b * D + d) * H + h) * W * C
                                src = gp + ((b * D + od) * H + oh) * W * K + (1 - kw) * K + tap
                                if C == 1:
                                    for w in range(wn):
                                        dst[w] += src[w * K]
                                else:
                                    for w in range(wn):
                                        for c in range(C):
                                            dst[w * C + c] += src[w * K + c]


def _pool_fwd(const real[:, :, :, :, ::1] x, real[:, :, :, :, ::1] out, signed char[:, :, :, :, ::1] arg):
    cdef Py_ssize_t B = out.shape[0], OD = out.shape[1], OH = out.shape[2], OW = out.shape[3], C = out.shape[4]
    cdef Py_ssize_t b, d, h, w, c, kd, kh, kw
    cdef signed char t, best_t
    cdef real v, best
    for b in range(B):
        for d in range(OD):
            for h in range(OH):
                for w in range(OW):
                    for c in range(C):
                        best = x[b, 2 * d, 2 * h, 2 * w, c]
                        best_t = 0
                        t = 0
                        for kd in range(2):
                            for kh in range(2):
                                for kw in range(2):
                                    v = x[b, 2 * d + kd, 2 * h + kh, 2 * w + kw, c]
                                    if v > best:
                                        best = v
                                        best_t = t
                                    t += 1
                        out[b, d, h, w, c] = best
                        arg[b, d, h, w, c] = best_t


def _pool_bwd(const real[:, :, :, :, ::1] gout, const signed char[:, :, :, :, ::1] arg, real[:, :, :, :, ::1] gin):
    cdef Py_ssize_t B = gout.shape[0], OD = gout.shape[1], OH = gout.shape[2], OW = gout.shape[3], C = gout.shape[4]
    cdef Py_ssize_t b, d, h, w, c
    cdef signed char t
    for b in range(B):
        for d in range(OD):
            for h in range(OH):
                for w in range(OW):
                    for c in range(C):
                        t = arg[b, d, h, w, c]
                        gin[b, 2 * d + (t >> 2), 2 * h + ((t >> 1) & 1), 2 * w + (t & 1), c] = gout[b, d, h, w, c]


def im2col3d(x):
    x = np.ascontiguousarray(x)
    b, d, h, w, c = x.shape
    cols = np.empty((b, d, h, w, 8 * c), dtype=x.dtype)
    (_im2col_taps if c < SMALL_C else _im2col_vox)(x, cols)
    return cols


def col2im3d(dcols, channels):
    dcols = np.ascontiguousarray(dcols)
    b, d, h, w, _ = dcols.shape
    dx = np.empty((b, d, h, w, channels), dtype=dcols.dtype)
    (_col2im_taps if channels < SMALL_C else _col2im_vox)(dcols, dx)
    return dx


def maxpool3d_forward(x):
    x = np.ascontiguousarray(x)
    b, d, h, w, c = x.shape
    out = np.empty((b, d // 2, h // 2, w // 2, c), dtype=x.dtype)
    arg = np.empty((b, d // 2, h // 2, w // 2, c), dtype=np.int8)
    _pool_fwd(x, out, arg)
    return out, arg


def maxpool3d_backward(gout, arg, in_shape):
    gout = np.ascontiguousarray(gout)
    gin = np.zeros(tuple(in_shape), dtype=gout.dtype)
    _pool_bwd(gout, np.ascontiguousarray(arg, dtype=np.int8), gin)
    return gin
