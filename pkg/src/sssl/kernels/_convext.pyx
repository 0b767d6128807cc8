# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution and pooling kernels (float64, valid mode)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(cnp.float64_t[:, :, :, ::1] x,
                   cnp.float64_t[:, :, :, ::1] w,
                   cnp.float64_t[::1] b,
                   int stride):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = (H - kh) // stride + 1
    cdef Py_ssize_t Wo = (W - kw) // stride + 1
    y_arr = np.empty((B, O, Ho, Wo), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t n, o, i, j, c, u, v
    cdef double acc
    with nogil:
        for n in range(B):
            for o in range(O):
                for i in range(Ho):
                    for j in range(Wo):
                        acc = b[o]
                        for c in range(C):
                            for u in range(kh):
                                for v in range(kw):
                                    acc += x[n, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                        y[n, o, i, j] = acc
    return y_arr


def conv2d_backward(cnp.float64_t[:, :, :, ::1] x,
                    cnp.float64_t[:, :, :, ::1] w,
                    int stride,
                    cnp.float64_t[:, :, :, ::1] dy):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t Ho = dy.shape[2], Wo = dy.shape[3]
    dx_arr = np.zeros((B, C, H, W), dtype=np.float64)
    dw_arr = np.zeros((O, C, kh, kw), dtype=np.float64)
    db_arr = np.zeros(O, dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] dx = dx_arr
    cdef cnp.float64_t[:, :, :, ::1] dw = dw_arr
    cdef cnp.float64_t[::1] db = db_arr
    cdef Py_ssize_t n, o, i, j, c, u, v
    cdef double g
    with nogil:
        for n in range(B):
            for o in range(O):
                for i in range(Ho):
                    for j in range(Wo):
                        g = dy[n, o, i, j]
                        db[o] += g
                        for c in range(C):
                            for u in range(kh):
                                for v in range(kw):
                                    dw[o, c, u, v] += x[n, c, i * stride + u, j * stride + v] * g
                                    dx[n, c, i * stride + u, j * stride + v] += w[o, c, u, v] * g
    return dx_arr, dw_arr, db_arr


def maxpool_forward(cnp.float64_t[:, :, :, ::1] x, int k):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = H // k, Wo = W // k
    y_arr = np.empty((B, C, Ho, Wo), dtype=np.float64)
    idx_arr = np.empty((B, C, Ho, Wo), dtype=np.int64)
    cdef cnp.float64_t[:, :, :, ::1] y = y_arr
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, c, i, j, u, v, best
    cdef double cur, val
    with nogil:
        for n in range(B):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        best = 0
                        cur = x[n, c, i * k, j * k]
                        for u in range(k):
                            for v in range(k):
                                val = x[n, c, i * k + u, j * k + v]
                                if val > cur:
                                    cur = val
                                    best = u * k + v
                        y[n, c, i, j] = cur
                        idx[n, c, i, j] = best
    return y_arr, idx_arr


def maxpool_backward(cnp.float64_t[:, :, :, ::1] dy,
                     cnp.int64_t[:, :, :, ::1] idx,
                     x_shape,
                     int k):
    cdef Py_ssize_t B = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3]
    cdef Py_ssize_t Ho = dy.shape[2], Wo = dy.shape[3]
    dx_arr = np.zeros((B, C, H, W), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, c, i, j, flat
    with nogil:
        for n in range(B):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        flat = idx[n, c, i, j]
                        dx[n, c, i * k + flat // k, j * k + flat % k] += dy[n, c, i, j]
    return dx_arr
