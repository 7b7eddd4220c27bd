# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im gathers used by the convolution primitives.

Both take the zero padding as arguments instead of materialising a padded
copy. ``col2im`` visits output positions in row-major order, which for every
input element adds the kernel taps in descending (row, column) order; the
numpy fallback uses the same order so both backends agree bit for bit.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int sh, int sw,
           int ph, int pw, int ho, int wo):
    """(N, C, H, W) -> (N*ho*wo, C*kh*kw), columns ordered (c, ki, kj)."""
    cdef Py_ssize_t n_batch = x.shape[0]
    cdef Py_ssize_t c_in = x.shape[1]
    cdef Py_ssize_t h = x.shape[2]
    cdef Py_ssize_t w = x.shape[3]
    cdef Py_ssize_t row_len = c_in * kh * kw
    out_arr = np.empty((n_batch * ho * wo, row_len), dtype=np.float64)
    if out_arr.size == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr
    cdef double* d = &out[0, 0]
    cdef const double* src = &x[0, 0, 0, 0]
    cdef const double* plane
    cdef Py_ssize_t n, c, i, j, ki, kj, y, xx
    with nogil:
        for n in range(n_batch):
            for i in range(ho):
                for j in range(wo):
                    for c in range(c_in):
                        plane = src + (n * c_in + c) * h * w
                        for ki in range(kh):
                            y = i * sh + ki - ph
                            if y < 0 or y >= h:
                                for kj in range(kw):
                                    d[kj] = 0.0
                            else:
                                for kj in range(kw):
                                    xx = j * sw + kj - pw
                                    d[kj] = plane[y * w + xx] if 0 <= xx < w else 0.0
                            d += kw
    return out_arr


def col2im(const double[:, ::1] cols, int n_batch, int c_in, int h, int w,
           int kh, int kw, int sh, int sw, int ph, int pw, int ho, int wo):
    """Adjoint of :func:`im2col`: scatter-add columns back to (N, C, H, W)."""
    out_arr = np.zeros((n_batch, c_in, h, w), dtype=np.float64)
    if cols.shape[0] == 0 or out_arr.size == 0:
        return out_arr
    cdef double[:, :, :, ::1] out = out_arr
    cdef double* dst = &out[0, 0, 0, 0]
    cdef const double* s = &cols[0, 0]
    cdef double* plane
    cdef Py_ssize_t n, c, i, j, ki, kj, y, xx
    with nogil:
        for n in range(n_batch):
            for i in range(ho):
                for j in range(wo):
                    for c in range(c_in):
                        plane = dst + (n * c_in + c) * h * w
                        for ki in range(kh):
                            y = i * sh + ki - ph
                            if 0 <= y < h:
                                for kj in range(kw):
                                    xx = j * sw + kj - pw
                                    if 0 <= xx < w:
                                        plane[y * w + xx] += s[kj]
                            s += kw
    return out_arr
