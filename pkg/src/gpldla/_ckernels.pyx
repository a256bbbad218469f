# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric kernels: BLAS-backed matmuls plus fused row ops.

Mirrors the call signatures of ``_kernels_py``.  The episode pipeline
spends nearly all its time in these functions on small matrices, where
fused single-pass loops and direct dgemm calls beat per-op numpy
dispatch.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND = "compiled"

cdef char TRANS_N = b'N'
cdef char TRANS_T = b'T'


cdef inline cnp.ndarray _c64(object a):
    return np.ascontiguousarray(a, dtype=np.float64)


cdef void _dgemm_rowmajor(char ta, char tb, double[:, ::1] a, double[:, ::1] b,
                          double[:, ::1] c, double beta) noexcept nogil:
    # Row-major product via the identity C^T = op(B)^T op(A)^T on the
    # column-major views BLAS sees.
    cdef int m = c.shape[0]
    cdef int n = c.shape[1]
    cdef int k
    cdef double alpha = 1.0
    cdef int lda = a.shape[1]
    cdef int ldb = b.shape[1]
    cdef int ldc = n
    if ta == TRANS_N:
        k = a.shape[1]
    else:
        k = a.shape[0]
    dgemm(&tb, &ta, &n, &m, &k, &alpha, &b[0, 0], &ldb, &a[0, 0], &lda,
          &beta, &c[0, 0], &ldc)


def matmul(a, b):
    cdef double[:, ::1] av = _c64(a)
    cdef double[:, ::1] bv = _c64(b)
    if av.shape[1] != bv.shape[0]:
        raise ValueError("matmul: inner dimensions differ")
    out = np.zeros((av.shape[0], bv.shape[1]))
    cdef double[:, ::1] cv = out
    if av.shape[0] and bv.shape[1] and av.shape[1]:
        _dgemm_rowmajor(TRANS_N, TRANS_N, av, bv, cv, 0.0)
    return out


def matmul_nt(a, b):
    """a @ b.T without materializing the transpose."""
    cdef double[:, ::1] av = _c64(a)
    cdef double[:, ::1] bv = _c64(b)
    if av.shape[1] != bv.shape[1]:
        raise ValueError("matmul_nt: inner dimensions differ")
    out = np.zeros((av.shape[0], bv.shape[0]))
    cdef double[:, ::1] cv = out
    if av.shape[0] and bv.shape[0] and av.shape[1]:
        _dgemm_rowmajor(TRANS_N, TRANS_T, av, bv, cv, 0.0)
    return out


def matmul_tn(a, b):
    """a.T @ b without materializing the transpose."""
    cdef double[:, ::1] av = _c64(a)
    cdef double[:, ::1] bv = _c64(b)
    if av.shape[0] != bv.shape[0]:
        raise ValueError("matmul_tn: inner dimensions differ")
    out = np.zeros((av.shape[1], bv.shape[1]))
    cdef double[:, ::1] cv = out
    if av.shape[1] and bv.shape[1] and av.shape[0]:
        _dgemm_rowmajor(TRANS_T, TRANS_N, av, bv, cv, 0.0)
    return out


def matmul_bias(a, b, bias):
    """Fused a @ b + bias with bias broadcast across rows."""
    cdef double[:, ::1] av = _c64(a)
    cdef double[:, ::1] bv = _c64(b)
    cdef double[::1] biasv = np.ascontiguousarray(bias, dtype=np.float64).ravel()
    if av.shape[1] != bv.shape[0]:
        raise ValueError("matmul_bias: inner dimensions differ")
    if biasv.shape[0] != bv.shape[1]:
        raise ValueError("matmul_bias: bias length differs from output width")
    out = np.empty((av.shape[0], bv.shape[1]))
    cdef double[:, ::1] cv = out
    cdef Py_ssize_t i, j
    for i in range(cv.shape[0]):
        for j in range(cv.shape[1]):
            cv[i, j] = biasv[j]
    if av.shape[0] and bv.shape[1] and av.shape[1]:
        _dgemm_rowmajor(TRANS_N, TRANS_N, av, bv, cv, 1.0)
    return out


def logsumexp_rows(x):
    cdef double[:, ::1] xv = _c64(x)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1]
    out = np.empty(n)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(n):
        m = xv[i, 0]
        for j in range(1, d):
            if xv[i, j] > m:
                m = xv[i, j]
        s = 0.0
        for j in range(d):
            s += exp(xv[i, j] - m)
        ov[i] = m + log(s)
    return out


def softmax_rows(x):
    cdef double[:, ::1] xv = _c64(x)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1]
    out = np.empty((n, d))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    cdef double m, s
    for i in range(n):
        m = xv[i, 0]
        for j in range(1, d):
            if xv[i, j] > m:
                m = xv[i, j]
        s = 0.0
        for j in range(d):
            ov[i, j] = exp(xv[i, j] - m)
            s += ov[i, j]
        for j in range(d):
            ov[i, j] /= s
    return out


def softmax_rows_backward(p, grad_out):
    cdef double[:, ::1] pv = _c64(p)
    cdef double[:, ::1] gv = _c64(grad_out)
    cdef Py_ssize_t n = pv.shape[0], d = pv.shape[1]
    out = np.empty((n, d))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += pv[i, j] * gv[i, j]
        for j in range(d):
            ov[i, j] = pv[i, j] * (gv[i, j] - dot)
    return out


def normalize_rows(x, eps):
    """Rescale each row to unit norm with an eps guard on the divisor.

    Returns (normalized, row_norms).
    """
    cdef double[:, ::1] xv = _c64(x)
    cdef double e = eps
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1]
    out = np.empty((n, d))
    norms = np.empty(n)
    cdef double[:, ::1] ov = out
    cdef double[::1] nv = norms
    cdef Py_ssize_t i, j
    cdef double s, inv
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += xv[i, j] * xv[i, j]
        s = sqrt(s)
        nv[i] = s
        inv = 1.0 / (s + e)
        for j in range(d):
            ov[i, j] = xv[i, j] * inv
    return out, norms


def normalize_rows_backward(x, norms, eps, grad_out):
    cdef double[:, ::1] xv = _c64(x)
    cdef double[::1] nv = np.ascontiguousarray(norms, dtype=np.float64)
    cdef double[:, ::1] gv = _c64(grad_out)
    cdef double e = eps
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1]
    out = np.empty((n, d))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    cdef double scale, dot, coef
    for i in range(n):
        scale = nv[i] + e
        if nv[i] == 0.0:
            for j in range(d):
                ov[i, j] = gv[i, j] / e
            continue
        dot = 0.0
        for j in range(d):
            dot += xv[i, j] * gv[i, j]
        coef = dot / (nv[i] * scale * scale)
        for j in range(d):
            ov[i, j] = gv[i, j] / scale - xv[i, j] * coef
    return out


def relu(x):
    cdef double[:, ::1] xv = _c64(x)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1]
    out = np.empty((n, d))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(d):
            ov[i, j] = xv[i, j] if xv[i, j] > 0.0 else 0.0
    return out


def relu_backward(x, grad_out):
    cdef double[:, ::1] xv = _c64(x)
    cdef double[:, ::1] gv = _c64(grad_out)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1]
    out = np.empty((n, d))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(d):
            ov[i, j] = gv[i, j] if xv[i, j] > 0.0 else 0.0
    return out
