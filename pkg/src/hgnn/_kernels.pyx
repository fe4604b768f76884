# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled message-passing kernels.

Hot loops of every GNN forward/backward: edge-indexed gather/scatter adds and
grouped max reductions. The pure-numpy twin lives in ``_kernels_py``; both
must stay bit-identical (same accumulation order, same tie rule).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def edge_scatter_add(double[:, ::1] out, cnp.int64_t[::1] src,
                     cnp.int64_t[::1] dst, double[::1] w, double[:, ::1] x):
    cdef Py_ssize_t e, j
    cdef Py_ssize_t n_edges = src.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t s, t
    cdef double we
    for e in range(n_edges):
        s = src[e]
        t = dst[e]
        we = w[e]
        for j in range(d):
            out[t, j] += we * x[s, j]


def scatter_add_rows(double[:, ::1] out, cnp.int64_t[::1] idx,
                     double[:, ::1] rows):
    cdef Py_ssize_t k, j
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t d = rows.shape[1]
    cdef Py_ssize_t t
    for k in range(n):
        t = idx[k]
        if t < 0:
            continue
        for j in range(d):
            out[t, j] += rows[k, j]


def edge_max(cnp.int64_t[::1] src, cnp.int64_t[::1] dst, double[:, ::1] x,
             Py_ssize_t n_out):
    cdef Py_ssize_t n_edges = src.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    out_arr = np.zeros((n_out, d), dtype=np.float64)
    arg_arr = np.full((n_out, d), -1, dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef cnp.int64_t[:, ::1] arg = arg_arr
    cdef Py_ssize_t e, j, s, t
    cdef double v
    for e in range(n_edges):
        s = src[e]
        t = dst[e]
        for j in range(d):
            v = x[s, j]
            if arg[t, j] < 0 or v > out[t, j]:
                out[t, j] = v
                arg[t, j] = s
    return out_arr, arg_arr


def edge_max_backward(cnp.int64_t[:, ::1] arg, double[:, ::1] grad_out,
                      Py_ssize_t n_in):
    cdef Py_ssize_t n = arg.shape[0]
    cdef Py_ssize_t d = arg.shape[1]
    gx_arr = np.zeros((n_in, d), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t i, j
    cdef cnp.int64_t r
    for i in range(n):
        for j in range(d):
            r = arg[i, j]
            if r >= 0:
                gx[r, j] += grad_out[i, j]
    return gx_arr
