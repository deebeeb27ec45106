# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for the hot extraction and scoring loops.

Mirrors the signatures and value conventions of ``_kernels_py``; the
four-corner lookups use the same fixed grouping so integer-valued inputs
agree bit-for-bit between backends.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

BACKEND = "compiled"

HAAR_TWO_HORIZ = 0
HAAR_TWO_VERT = 1
HAAR_THREE = 2
HAAR_FOUR = 3


cdef inline double _sig(double z) noexcept nogil:
    cdef double ez
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    ez = exp(z)
    return ez / (1.0 + ez)


def sigmoid(z):
    arr = np.asarray(z, dtype=np.float64)
    cdef cnp.ndarray flat = np.ascontiguousarray(arr).reshape(-1)
    cdef double[::1] v = flat
    cdef Py_ssize_t i
    out = np.empty(v.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    for i in range(v.shape[0]):
        o[i] = _sig(v[i])
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def logit_score(double[::1] weights, double bias, double[::1] x):
    """Logistic output of a linear model with a fixed left-to-right dot."""
    cdef double acc = bias
    cdef Py_ssize_t i
    if weights.shape[0] != x.shape[0]:
        raise ValueError("weights and input lengths differ")
    for i in range(weights.shape[0]):
        acc += weights[i] * x[i]
    return _sig(acc)


cdef inline double _corner(const double[:, ::1] t, Py_ssize_t x0, Py_ssize_t y0,
                           Py_ssize_t x1, Py_ssize_t y1) noexcept nogil:
    return (t[y1, x1] - t[y0, x1]) - (t[y1, x0] - t[y0, x0])


cdef inline double _mean(const double[:, ::1] t, Py_ssize_t x0, Py_ssize_t y0,
                         Py_ssize_t x1, Py_ssize_t y1) noexcept nogil:
    cdef double area = <double>((x1 - x0) * (y1 - y0))
    if area <= 0.0:
        return 0.0
    return _corner(t, x0, y0, x1, y1) / area


def box_sums(const double[:, ::1] table, const long long[:, ::1] boxes):
    cdef Py_ssize_t n = boxes.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = _corner(table, boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3])
    return out


cdef double _haar(const double[:, ::1] t, Py_ssize_t x0, Py_ssize_t y0,
                  Py_ssize_t x1, Py_ssize_t y1, int kind) noexcept nogil:
    cdef Py_ssize_t xm, ym, e1, e2, w
    if kind == 0:
        xm = x0 + (x1 - x0) // 2
        return _mean(t, x0, y0, xm, y1) - _mean(t, xm, y0, x1, y1)
    if kind == 1:
        ym = y0 + (y1 - y0) // 2
        return _mean(t, x0, y0, x1, ym) - _mean(t, x0, ym, x1, y1)
    if kind == 2:
        w = x1 - x0
        e1 = x0 + w // 3
        e2 = x0 + (2 * w) // 3
        return _mean(t, e1, y0, e2, y1) - 0.5 * (_mean(t, x0, y0, e1, y1) + _mean(t, e2, y0, x1, y1))
    xm = x0 + (x1 - x0) // 2
    ym = y0 + (y1 - y0) // 2
    return 0.5 * (_mean(t, x0, y0, xm, ym) + _mean(t, xm, ym, x1, y1)) \
        - 0.5 * (_mean(t, xm, y0, x1, ym) + _mean(t, x0, ym, xm, y1))


def haar_response(const double[:, ::1] table, box, int kind):
    if kind < 0 or kind > 3:
        raise ValueError(f"unknown haar kind code {kind}")
    return _haar(table, <Py_ssize_t>box[0], <Py_ssize_t>box[1],
                 <Py_ssize_t>box[2], <Py_ssize_t>box[3], kind)


def haar_many(const double[:, ::1] table, const long long[:, ::1] boxes, int kind):
    if kind < 0 or kind > 3:
        raise ValueError(f"unknown haar kind code {kind}")
    cdef Py_ssize_t n = boxes.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = _haar(table, boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3], kind)
    return out


def cell_hist_many(const double[:, :, ::1] stack, const long long[:, ::1] boxes, int cells):
    """Per-cell histograms over a bin-wise summed-area stack; rows L1-normalized."""
    cdef Py_ssize_t bins = stack.shape[0]
    cdef Py_ssize_t n = boxes.shape[0]
    cdef Py_ssize_t dim = cells * cells * bins
    out = np.empty((n, dim), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, cy, cx, k, pos
    cdef Py_ssize_t x0, y0, x1, y1, ex0, ex1, ey0, ey1
    cdef long long w, h
    cdef double total, v
    with nogil:
        for i in range(n):
            x0 = boxes[i, 0]
            y0 = boxes[i, 1]
            x1 = boxes[i, 2]
            y1 = boxes[i, 3]
            w = x1 - x0
            h = y1 - y0
            total = 0.0
            pos = 0
            for cy in range(cells):
                ey0 = y0 + (h * cy) // cells
                ey1 = y0 + (h * (cy + 1)) // cells
                for cx in range(cells):
                    ex0 = x0 + (w * cx) // cells
                    ex1 = x0 + (w * (cx + 1)) // cells
                    for k in range(bins):
                        v = _corner(stack[k], ex0, ey0, ex1, ey1)
                        if v < 0.0:  # four-corner cancellation noise
                            v = 0.0
                        o[i, pos] = v
                        total += v
                        pos += 1
            if total > 0.0:
                for pos in range(dim):
                    o[i, pos] /= total
    return out


def cell_hist(const double[:, :, ::1] stack, box, int cells):
    boxes = np.asarray([box], dtype=np.int64)
    return cell_hist_many(stack, boxes, cells)[0]
