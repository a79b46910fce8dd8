# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: valid-mode stride-1 convolution and 2x2 max-pooling.

Same contracts as ``python_backend``; see that module for the reference
semantics.  Loops accumulate serially so results are reproducible run to run.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w, double[::1] b):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], Cin = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], Cout = w.shape[3]
    cdef Py_ssize_t oh = H - kh + 1, ow = W - kw + 1
    cdef cnp.ndarray[double, ndim=4] out = np.empty((B, oh, ow, Cout))
    cdef double[:, :, :, ::1] y = out
    cdef Py_ssize_t n, i, j, co, p, q, ci
    cdef double acc

    for n in range(B):
        for i in range(oh):
            for j in range(ow):
                for co in range(Cout):
                    acc = b[co]
                    for p in range(kh):
                        for q in range(kw):
                            for ci in range(Cin):
                                acc += x[n, i + p, j + q, ci] * w[p, q, ci, co]
                    y[n, i, j, co] = acc
    return out


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                    double[:, :, :, ::1] dy):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], Cin = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], Cout = w.shape[3]
    cdef Py_ssize_t oh = dy.shape[1], ow = dy.shape[2]
    cdef cnp.ndarray[double, ndim=4] dx_arr = np.zeros((B, H, W, Cin))
    cdef cnp.ndarray[double, ndim=4] dw_arr = np.zeros((kh, kw, Cin, Cout))
    cdef cnp.ndarray[double, ndim=1] db_arr = np.zeros(Cout)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t n, i, j, co, p, q, ci
    cdef double g

    for n in range(B):
        for i in range(oh):
            for j in range(ow):
                for co in range(Cout):
                    g = dy[n, i, j, co]
                    db[co] += g
                    for p in range(kh):
                        for q in range(kw):
                            for ci in range(Cin):
                                dw[p, q, ci, co] += x[n, i + p, j + q, ci] * g
                                dx[n, i + p, j + q, ci] += w[p, q, ci, co] * g
    return dx_arr, dw_arr, db_arr


def maxpool2_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t oh = H // 2, ow = W // 2
    cdef cnp.ndarray[double, ndim=4] out = np.empty((B, oh, ow, C))
    cdef cnp.ndarray[cnp.int8_t, ndim=4] arg_arr = np.empty((B, oh, ow, C), dtype=np.int8)
    cdef double[:, :, :, ::1] y = out
    cdef cnp.int8_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t n, i, j, c, p, q, best_k
    cdef double v, best

    for n in range(B):
        for i in range(oh):
            for j in range(ow):
                for c in range(C):
                    best = x[n, 2 * i, 2 * j, c]
                    best_k = 0
                    for p in range(2):
                        for q in range(2):
                            v = x[n, 2 * i + p, 2 * j + q, c]
                            if v > best:
                                best = v
                                best_k = 2 * p + q
                    y[n, i, j, c] = best
                    arg[n, i, j, c] = <cnp.int8_t> best_k
    return out, arg_arr


def maxpool2_backward(cnp.int8_t[:, :, :, ::1] arg, double[:, :, :, ::1] dy, in_shape):
    cdef Py_ssize_t B = in_shape[0], H = in_shape[1], W = in_shape[2], C = in_shape[3]
    cdef Py_ssize_t oh = H // 2, ow = W // 2
    cdef cnp.ndarray[double, ndim=4] dx_arr = np.zeros((B, H, W, C))
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, i, j, c, k

    for n in range(B):
        for i in range(oh):
            for j in range(ow):
                for c in range(C):
                    k = arg[n, i, j, c]
                    dx[n, 2 * i + k // 2, 2 * j + k % 2, c] = dy[n, i, j, c]
    return dx_arr
