# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels. Semantics match ``_fallback`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline void valid_range(Py_ssize_t j, Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t w,
                             Py_ssize_t ow, Py_ssize_t *lo, Py_ssize_t *hi) noexcept nogil:
    # output columns xx with 0 <= xx*stride + j - pad < w
    cdef Py_ssize_t a = 0, e = ow
    while a < ow and a * stride + j - pad < 0:
        a += 1
    while e > a and (e - 1) * stride + j - pad >= w:
        e -= 1
    lo[0] = a
    hi[0] = e


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int stride, int pad, int oh, int ow):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    out_arr = np.zeros((c * kh * kw, n * oh * ow), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t b, y, xx, ch, i, j, row, col, sy, off, lo, hi
    with nogil:
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    valid_range(j, stride, pad, w, ow, &lo, &hi)
                    off = j - pad
                    for b in range(n):
                        for y in range(oh):
                            sy = y * stride + i - pad
                            if sy < 0 or sy >= h:
                                continue
                            col = (b * oh + y) * ow
                            for xx in range(lo, hi):
                                out[row, col + xx] = x[b, ch, sy, xx * stride + off]
    return out_arr


def col2im(const double[:, ::1] cols, int n, int c, int h, int w,
           int kh, int kw, int stride, int pad, int oh, int ow):
    out_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, y, xx, ch, i, j, row, col, sy, off, lo, hi
    with nogil:
        # per-image tiles stay in cache; each output pixel still sums over (i, j) in order
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        valid_range(j, stride, pad, w, ow, &lo, &hi)
                        off = j - pad
                        for y in range(oh):
                            sy = y * stride + i - pad
                            if sy < 0 or sy >= h:
                                continue
                            col = (b * oh + y) * ow
                            for xx in range(lo, hi):
                                out[b, ch, sy, xx * stride + off] += cols[row, col + xx]
    return out_arr
