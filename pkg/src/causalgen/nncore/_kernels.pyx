# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled float64 kernels for the dense and GRU hot paths.

Same contract as ``kernels_numpy``.  Matrix products go through BLAS via
``scipy.linalg.cython_blas`` into preallocated buffers, and cheap
elementwise arithmetic runs in C loops; transcendentals stay on numpy's
vectorized ufuncs, which beat scalar libm calls by an order of magnitude.
The saving over the numpy backend is dispatch and temporary-array
overhead, which dominates at these matrix sizes.
"""

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND_NAME = "compiled"

ACT_IDENTITY = 0
ACT_TANH = 1


cdef void _zero(double[:, ::1] c) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(c.shape[0]):
        for j in range(c.shape[1]):
            c[i, j] = 0.0


cdef void _gemm_nn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c, double beta) noexcept nogil:
    """c[m,n] = a[m,k] @ b[k,n] + beta * c (row-major via transposed BLAS call)."""
    cdef int m = <int> a.shape[0]
    cdef int k = <int> a.shape[1]
    cdef int n = <int> b.shape[1]
    cdef double alpha = 1.0
    if m == 0 or n == 0:
        return
    if k == 0:
        if beta == 0.0:
            _zero(c)
        return
    dgemm("N", "N", &n, &m, &k, &alpha, &b[0, 0], &n, &a[0, 0], &k, &beta, &c[0, 0], &n)


cdef void _gemm_nt(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c, double beta) noexcept nogil:
    """c[m,n] = a[m,k] @ b[n,k]^T + beta * c."""
    cdef int m = <int> a.shape[0]
    cdef int k = <int> a.shape[1]
    cdef int n = <int> b.shape[0]
    cdef double alpha = 1.0
    if m == 0 or n == 0:
        return
    if k == 0:
        if beta == 0.0:
            _zero(c)
        return
    dgemm("T", "N", &n, &m, &k, &alpha, &b[0, 0], &k, &a[0, 0], &k, &beta, &c[0, 0], &n)


cdef void _gemm_tn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c, double beta) noexcept nogil:
    """c[k,n] = a[m,k]^T @ b[m,n] + beta * c."""
    cdef int m = <int> a.shape[0]
    cdef int k = <int> a.shape[1]
    cdef int n = <int> b.shape[1]
    cdef double alpha = 1.0
    if k == 0 or n == 0:
        return
    if m == 0:
        if beta == 0.0:
            _zero(c)
        return
    dgemm("N", "T", &n, &k, &m, &alpha, &b[0, 0], &n, &a[0, 0], &k, &beta, &c[0, 0], &n)


def dense_forward(cnp.ndarray[double, ndim=2] x,
                  cnp.ndarray[double, ndim=2] w,
                  cnp.ndarray[double, ndim=1] b,
                  int act):
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t n = w.shape[1]
    cdef cnp.ndarray[double, ndim=2] y = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] xv = np.ascontiguousarray(x)
    cdef double[:, ::1] wv = np.ascontiguousarray(w)
    cdef double[::1] bv = np.ascontiguousarray(b)
    cdef double[:, ::1] yv = y
    cdef Py_ssize_t i, j
    with nogil:
        _gemm_nn(xv, wv, yv, 0.0)
        for i in range(m):
            for j in range(n):
                yv[i, j] += bv[j]
    if act == 1:
        np.tanh(y, out=y)
    return y


def dense_backward(cnp.ndarray[double, ndim=2] x,
                   cnp.ndarray[double, ndim=2] w,
                   cnp.ndarray[double, ndim=2] y,
                   cnp.ndarray[double, ndim=2] dy,
                   int act):
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t k = x.shape[1]
    cdef Py_ssize_t n = w.shape[1]
    cdef cnp.ndarray[double, ndim=2] da_arr
    cdef cnp.ndarray[double, ndim=2] dx = np.empty((m, k), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] dw = np.empty((k, n), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] db = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] xv = np.ascontiguousarray(x)
    cdef double[:, ::1] wv = np.ascontiguousarray(w)
    cdef double[:, ::1] yv = np.ascontiguousarray(y)
    cdef double[:, ::1] dyv = np.ascontiguousarray(dy)
    cdef double[:, ::1] dav
    cdef double[:, ::1] dxv = dx
    cdef double[:, ::1] dwv = dw
    cdef double[::1] dbv = db
    cdef Py_ssize_t i, j
    if act == 1:
        da_arr = np.empty((m, n), dtype=np.float64)
        dav = da_arr
        with nogil:
            for i in range(m):
                for j in range(n):
                    dav[i, j] = dyv[i, j] * (1.0 - yv[i, j] * yv[i, j])
    else:
        da_arr = np.ascontiguousarray(dy)
        dav = da_arr
    with nogil:
        _gemm_nt(dav, wv, dxv, 0.0)
        _gemm_tn(xv, dav, dwv, 0.0)
        for i in range(m):
            for j in range(n):
                dbv[j] += dav[i, j]
    return dx, dw, db


cdef void _stable_sigmoid(cnp.ndarray[double, ndim=2] a):
    # in place; numpy ufuncs for the transcendental passes
    signs = a >= 0
    np.abs(a, out=a)
    np.negative(a, out=a)
    np.exp(a, out=a)
    num = np.where(signs, 1.0, a)
    a += 1.0
    np.divide(num, a, out=a)


def gru_step_forward(cnp.ndarray[double, ndim=2] ax,
                     cnp.ndarray[double, ndim=2] h,
                     cnp.ndarray[double, ndim=2] u_z,
                     cnp.ndarray[double, ndim=2] u_r,
                     cnp.ndarray[double, ndim=2] u_h):
    cdef Py_ssize_t m = h.shape[0]
    cdef Py_ssize_t d = h.shape[1]
    cdef cnp.ndarray[double, ndim=2] h_new = np.empty((m, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] z = np.empty((m, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] r = np.empty((m, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] c = np.empty((m, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] rh = np.empty((m, d), dtype=np.float64)
    cdef double[:, ::1] axv = np.ascontiguousarray(ax)
    cdef double[:, ::1] hv = np.ascontiguousarray(h)
    cdef double[:, ::1] uzv = np.ascontiguousarray(u_z)
    cdef double[:, ::1] urv = np.ascontiguousarray(u_r)
    cdef double[:, ::1] uhv = np.ascontiguousarray(u_h)
    cdef double[:, ::1] hnv = h_new
    cdef double[:, ::1] zv = z
    cdef double[:, ::1] rv = r
    cdef double[:, ::1] cv = c
    cdef double[:, ::1] rhv = rh
    cdef Py_ssize_t i, j
    with nogil:
        # z and r pre-activations reuse the output buffers
        _gemm_nn(hv, uzv, zv, 0.0)
        _gemm_nn(hv, urv, rv, 0.0)
        for i in range(m):
            for j in range(d):
                zv[i, j] += axv[i, j]
                rv[i, j] += axv[i, d + j]
    _stable_sigmoid(z)
    _stable_sigmoid(r)
    with nogil:
        for i in range(m):
            for j in range(d):
                rhv[i, j] = rv[i, j] * hv[i, j]
        _gemm_nn(rhv, uhv, cv, 0.0)
        for i in range(m):
            for j in range(d):
                cv[i, j] += axv[i, 2 * d + j]
    np.tanh(c, out=c)
    with nogil:
        for i in range(m):
            for j in range(d):
                hnv[i, j] = (1.0 - zv[i, j]) * hv[i, j] + zv[i, j] * cv[i, j]
    return h_new, z, r, c


def gru_step_backward(cnp.ndarray[double, ndim=2] h,
                      cnp.ndarray[double, ndim=2] u_z,
                      cnp.ndarray[double, ndim=2] u_r,
                      cnp.ndarray[double, ndim=2] u_h,
                      cnp.ndarray[double, ndim=2] z,
                      cnp.ndarray[double, ndim=2] r,
                      cnp.ndarray[double, ndim=2] c,
                      cnp.ndarray[double, ndim=2] dh_new):
    cdef Py_ssize_t m = h.shape[0]
    cdef Py_ssize_t d = h.shape[1]
    cdef cnp.ndarray[double, ndim=2] dax = np.empty((m, 3 * d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] da_z = np.empty((m, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] da_r = np.empty((m, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] da_h = np.empty((m, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] dh = np.empty((m, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] du_z = np.empty((d, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] du_r = np.empty((d, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] du_h = np.empty((d, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] rh = np.empty((m, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] drh = np.empty((m, d), dtype=np.float64)
    cdef double[:, ::1] hv = np.ascontiguousarray(h)
    cdef double[:, ::1] uzv = np.ascontiguousarray(u_z)
    cdef double[:, ::1] urv = np.ascontiguousarray(u_r)
    cdef double[:, ::1] uhv = np.ascontiguousarray(u_h)
    cdef double[:, ::1] zv = np.ascontiguousarray(z)
    cdef double[:, ::1] rv = np.ascontiguousarray(r)
    cdef double[:, ::1] cv = np.ascontiguousarray(c)
    cdef double[:, ::1] gv = np.ascontiguousarray(dh_new)
    cdef double[:, ::1] daxv = dax
    cdef double[:, ::1] dazv = da_z
    cdef double[:, ::1] darv = da_r
    cdef double[:, ::1] dahv = da_h
    cdef double[:, ::1] dhv = dh
    cdef double[:, ::1] duzv = du_z
    cdef double[:, ::1] durv = du_r
    cdef double[:, ::1] duhv = du_h
    cdef double[:, ::1] rhv = rh
    cdef double[:, ::1] drhv = drh
    cdef Py_ssize_t i, j
    cdef double dz, dc
    with nogil:
        for i in range(m):
            for j in range(d):
                dz = gv[i, j] * (cv[i, j] - hv[i, j])
                dc = gv[i, j] * zv[i, j]
                dhv[i, j] = gv[i, j] * (1.0 - zv[i, j])
                dahv[i, j] = dc * (1.0 - cv[i, j] * cv[i, j])
                dazv[i, j] = dz * zv[i, j] * (1.0 - zv[i, j])
                rhv[i, j] = rv[i, j] * hv[i, j]
        # du_h = (r*h)^T @ da_h ; drh = da_h @ u_h^T
        _gemm_tn(rhv, dahv, duhv, 0.0)
        _gemm_nt(dahv, uhv, drhv, 0.0)
        for i in range(m):
            for j in range(d):
                # dr folded straight into da_r = dr * r * (1 - r)
                darv[i, j] = drhv[i, j] * hv[i, j] * rv[i, j] * (1.0 - rv[i, j])
                dhv[i, j] += drhv[i, j] * rv[i, j]
        _gemm_tn(hv, darv, durv, 0.0)
        _gemm_tn(hv, dazv, duzv, 0.0)
        _gemm_nt(darv, urv, dhv, 1.0)
        _gemm_nt(dazv, uzv, dhv, 1.0)
        for i in range(m):
            for j in range(d):
                daxv[i, j] = dazv[i, j]
                daxv[i, d + j] = darv[i, j]
                daxv[i, 2 * d + j] = dahv[i, j]
    return dax, dh, du_z, du_r, du_h
