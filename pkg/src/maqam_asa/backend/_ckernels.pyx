# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels; contracts mirror backend.pure exactly."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col3(real[:, :, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    if real is float:
        out_arr = np.zeros((b, h * w, c * 9), dtype=np.float32)
    else:
        out_arr = np.zeros((b, h * w, c * 9), dtype=np.float64)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, i, j, di, dj, ii, jj, row, col0
    with nogil:
        for bi in range(b):
            for i in range(h):
                for j in range(w):
                    row = i * w + j
                    for ci in range(c):
                        col0 = ci * 9
                        for di in range(3):
                            ii = i + di - 1
                            if ii < 0 or ii >= h:
                                continue
                            for dj in range(3):
                                jj = j + dj - 1
                                if jj < 0 or jj >= w:
                                    continue
                                out[bi, row, col0 + di * 3 + dj] = x[bi, ci, ii, jj]
    return out_arr


def col2im3(real[:, :, ::1] cols, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t b = cols.shape[0], c = cols.shape[2] // 9
    if real is float:
        out_arr = np.zeros((b, c, h, w), dtype=np.float32)
    else:
        out_arr = np.zeros((b, c, h, w), dtype=np.float64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, i, j, di, dj, ii, jj, row, col0
    with nogil:
        for bi in range(b):
            for i in range(h):
                for j in range(w):
                    row = i * w + j
                    for ci in range(c):
                        col0 = ci * 9
                        for di in range(3):
                            ii = i + di - 1
                            if ii < 0 or ii >= h:
                                continue
                            for dj in range(3):
                                jj = j + dj - 1
                                if jj < 0 or jj >= w:
                                    continue
                                out[bi, ci, ii, jj] += cols[bi, row, col0 + di * 3 + dj]
    return out_arr


def maxpool2(real[:, :, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t h2 = h // 2, w2 = w // 2
    if real is float:
        out_arr = np.empty((b, c, h2, w2), dtype=np.float32)
    else:
        out_arr = np.empty((b, c, h2, w2), dtype=np.float64)
    idx_arr = np.empty((b, c, h2, w2), dtype=np.uint8)
    cdef real[:, :, :, ::1] out = out_arr
    cdef unsigned char[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t bi, ci, i, j
    cdef real best, v
    cdef unsigned char k
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for i in range(h2):
                    for j in range(w2):
                        best = x[bi, ci, 2 * i, 2 * j]
                        k = 0
                        v = x[bi, ci, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v
                            k = 1
                        v = x[bi, ci, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v
                            k = 2
                        v = x[bi, ci, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v
                            k = 3
                        out[bi, ci, i, j] = best
                        idx[bi, ci, i, j] = k
    return out_arr, idx_arr


def maxpool2_backward(real[:, :, :, ::1] grad, unsigned char[:, :, :, ::1] idx,
                      Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t b = grad.shape[0], c = grad.shape[1]
    cdef Py_ssize_t h2 = grad.shape[2], w2 = grad.shape[3]
    if real is float:
        out_arr = np.zeros((b, c, h, w), dtype=np.float32)
    else:
        out_arr = np.zeros((b, c, h, w), dtype=np.float64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, ci, i, j
    cdef unsigned char k
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for i in range(h2):
                    for j in range(w2):
                        k = idx[bi, ci, i, j]
                        out[bi, ci, 2 * i + (k >> 1), 2 * j + (k & 1)] = grad[bi, ci, i, j]
    return out_arr
