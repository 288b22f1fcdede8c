# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im kernels.

Both kernels accumulate in (kernel-row, kernel-col) lexicographic order so that
results are bit-identical to the numpy fallback in ``_pykernels``.
"""
import numpy as np

ctypedef fused floating:
    float
    double


def _im2col(const floating[:, :, :, ::1] x, Py_ssize_t k, Py_ssize_t stride,
            Py_ssize_t oh, Py_ssize_t ow, floating[:, :, ::1] cols):
    cdef Py_ssize_t n_batch = x.shape[0], chans = x.shape[1]
    cdef Py_ssize_t n, c, ki, kj, i, j, row, col, y0
    with nogil:
        for n in range(n_batch):
            for c in range(chans):
                for ki in range(k):
                    for kj in range(k):
                        row = (c * k + ki) * k + kj
                        for i in range(oh):
                            y0 = i * stride + ki
                            col = i * ow
                            for j in range(ow):
                                cols[n, row, col + j] = x[n, c, y0, j * stride + kj]


def _col2im(const floating[:, :, ::1] cols, Py_ssize_t k, Py_ssize_t stride,
            Py_ssize_t oh, Py_ssize_t ow, floating[:, :, :, ::1] out):
    cdef Py_ssize_t n_batch = out.shape[0], chans = out.shape[1]
    cdef Py_ssize_t n, c, ki, kj, i, j, row, col, y0
    with nogil:
        for n in range(n_batch):
            for c in range(chans):
                for ki in range(k):
                    for kj in range(k):
                        row = (c * k + ki) * k + kj
                        for i in range(oh):
                            y0 = i * stride + ki
                            col = i * ow
                            for j in range(ow):
                                out[n, c, y0, j * stride + kj] += cols[n, row, col + j]


def im2col(x, int k, int stride, int oh, int ow):
    n, c = x.shape[0], x.shape[1]
    x = np.ascontiguousarray(x)
    cols = np.empty((n, c * k * k, oh * ow), dtype=x.dtype)
    _im2col(x, k, stride, oh, ow, cols)
    return cols


def col2im(cols, tuple shape, int k, int stride, int oh, int ow):
    cols = np.ascontiguousarray(cols)
    out = np.zeros(shape, dtype=cols.dtype)
    _col2im(cols, k, stride, oh, ow, out)
    return out
