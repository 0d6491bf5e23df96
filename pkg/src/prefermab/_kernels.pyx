# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: tanh MLP forward/backward, budgeted greedy selection, PAV.

The MLP kernels call BLAS ``dgemm`` through scipy, add biases in place and
reuse numpy's vectorized tanh.

Every function here has a numpy twin in ``_pykernels`` with an identical
signature; ``prefermab.kernels`` picks one at import time.
"""
import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double* _ptr(cnp.ndarray a):
    return <double*> cnp.PyArray_DATA(a)


cdef void _mm(double* A, double* B, double* C, int M, int N, int K, double beta) noexcept nogil:
    # row-major C (M x N) = A (M x K) @ B (K x N) + beta * C
    cdef char n = b'N'
    cdef double one = 1.0
    dgemm(&n, &n, &N, &M, &K, &one, B, &N, A, &K, &beta, C, &N)


cdef void _mm_tn(double* A, double* B, double* C, int M, int N, int K) noexcept nogil:
    # row-major C (M x N) = A.T @ B with A (K x M), B (K x N)
    cdef char n = b'N', t = b'T'
    cdef double one = 1.0, zero = 0.0
    dgemm(&n, &t, &N, &M, &K, &one, B, &N, A, &M, &zero, C, &N)


cdef void _mm_nt(double* A, double* B, double* C, int M, int N, int K) noexcept nogil:
    # row-major C (M x N) = A @ B.T with A (M x K), B (N x K)
    cdef char n = b'N', t = b'T'
    cdef double one = 1.0, zero = 0.0
    dgemm(&t, &n, &N, &M, &K, &one, B, &K, A, &K, &zero, C, &N)


cdef void _add_bias(double* Y, double* b, Py_ssize_t rows, Py_ssize_t cols) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(rows):
        for j in range(cols):
            Y[i * cols + j] += b[j]


def mlp_forward(x, W1, b1, W2, b2, W3, b3):
    cdef cnp.ndarray xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray W1a = np.ascontiguousarray(W1, dtype=np.float64)
    cdef cnp.ndarray W2a = np.ascontiguousarray(W2, dtype=np.float64)
    cdef cnp.ndarray W3a = np.ascontiguousarray(W3, dtype=np.float64)
    cdef cnp.ndarray b1a = np.ascontiguousarray(b1, dtype=np.float64)
    cdef cnp.ndarray b2a = np.ascontiguousarray(b2, dtype=np.float64)
    cdef cnp.ndarray b3a = np.ascontiguousarray(b3, dtype=np.float64)
    cdef int B = xa.shape[0], n_in = W1a.shape[0]
    cdef int n_h1 = W1a.shape[1], n_h2 = W2a.shape[1], n_out = W3a.shape[1]
    cdef cnp.ndarray h1 = np.empty((B, n_h1))
    cdef cnp.ndarray h2 = np.empty((B, n_h2))
    cdef cnp.ndarray y = np.empty((B, n_out))
    _mm(_ptr(xa), _ptr(W1a), _ptr(h1), B, n_h1, n_in, 0.0)
    _add_bias(_ptr(h1), _ptr(b1a), B, n_h1)
    np.tanh(h1, out=h1)
    _mm(_ptr(h1), _ptr(W2a), _ptr(h2), B, n_h2, n_h1, 0.0)
    _add_bias(_ptr(h2), _ptr(b2a), B, n_h2)
    np.tanh(h2, out=h2)
    _mm(_ptr(h2), _ptr(W3a), _ptr(y), B, n_out, n_h2, 0.0)
    _add_bias(_ptr(y), _ptr(b3a), B, n_out)
    return h1, h2, y


cdef void _colsum(double* D, double* out, Py_ssize_t rows, Py_ssize_t cols) noexcept nogil:
    cdef Py_ssize_t i, j
    for j in range(cols):
        out[j] = 0.0
    for i in range(rows):
        for j in range(cols):
            out[j] += D[i * cols + j]


cdef void _tanh_grad(double* D, double* H, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(n):
        D[i] = D[i] * (1.0 - H[i] * H[i])


def mlp_backward(x, h1, h2, W1, W2, W3, dy):
    cdef cnp.ndarray xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray h1a = np.ascontiguousarray(h1, dtype=np.float64)
    cdef cnp.ndarray h2a = np.ascontiguousarray(h2, dtype=np.float64)
    cdef cnp.ndarray W1a = np.ascontiguousarray(W1, dtype=np.float64)
    cdef cnp.ndarray W2a = np.ascontiguousarray(W2, dtype=np.float64)
    cdef cnp.ndarray W3a = np.ascontiguousarray(W3, dtype=np.float64)
    cdef cnp.ndarray dya = np.ascontiguousarray(dy, dtype=np.float64)
    cdef int B = xa.shape[0], n_in = W1a.shape[0]
    cdef int n_h1 = W1a.shape[1], n_h2 = W2a.shape[1], n_out = W3a.shape[1]
    cdef cnp.ndarray gW1 = np.empty((n_in, n_h1))
    cdef cnp.ndarray gb1 = np.empty(n_h1)
    cdef cnp.ndarray gW2 = np.empty((n_h1, n_h2))
    cdef cnp.ndarray gb2 = np.empty(n_h2)
    cdef cnp.ndarray gW3 = np.empty((n_h2, n_out))
    cdef cnp.ndarray gb3 = np.empty(n_out)
    cdef cnp.ndarray d2 = np.empty((B, n_h2))
    cdef cnp.ndarray d1 = np.empty((B, n_h1))
    cdef cnp.ndarray dx = np.empty((B, n_in))
    _mm_tn(_ptr(h2a), _ptr(dya), _ptr(gW3), n_h2, n_out, B)
    _colsum(_ptr(dya), _ptr(gb3), B, n_out)
    _mm_nt(_ptr(dya), _ptr(W3a), _ptr(d2), B, n_h2, n_out)
    _tanh_grad(_ptr(d2), _ptr(h2a), B * n_h2)
    _mm_tn(_ptr(h1a), _ptr(d2), _ptr(gW2), n_h1, n_h2, B)
    _colsum(_ptr(d2), _ptr(gb2), B, n_h2)
    _mm_nt(_ptr(d2), _ptr(W2a), _ptr(d1), B, n_h1, n_h2)
    _tanh_grad(_ptr(d1), _ptr(h1a), B * n_h1)
    _mm_tn(_ptr(xa), _ptr(d1), _ptr(gW1), n_in, n_h1, B)
    _colsum(_ptr(d1), _ptr(gb1), B, n_h1)
    _mm_nt(_ptr(d1), _ptr(W1a), _ptr(dx), B, n_in, n_h1)
    return gW1, gb1, gW2, gb2, gW3, gb3, dx


def greedy_proba(p, costs, double budget, opt_in):
    """Index of the chosen action per arm (-1 for opted-out arms)."""
    cdef double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double[::1] cv = np.ascontiguousarray(costs, dtype=np.float64)
    cdef const signed char[::1] xi = np.ascontiguousarray(opt_in, dtype=np.int8)
    cdef Py_ssize_t n = pv.shape[0], n_act = pv.shape[1]
    out_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    # stable sort on -p keeps (lower arm, lower action) first among ties
    order_arr = np.argsort(-np.asarray(pv).ravel(), kind="stable").astype(np.int64)
    cdef cnp.int64_t[::1] order = order_arr
    cdef Py_ssize_t idx, arm, act, remaining = 0
    cdef double spent = 0.0, c
    for arm in range(n):
        if xi[arm]:
            remaining += 1
    for idx in range(n * n_act):
        if remaining == 0:
            break
        arm = order[idx] // n_act
        act = order[idx] % n_act
        if not xi[arm] or out[arm] >= 0:
            continue
        c = cv[act]
        if spent + c <= budget:
            out[arm] = act
            spent += c
            remaining -= 1
    for arm in range(n):
        if xi[arm] and out[arm] < 0:
            out[arm] = 0
    return out_arr


def pav(y, w):
    """Weighted least-squares non-decreasing fit of ``y`` (pool adjacent violators)."""
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0], i, j, idx, top = -1
    fit_arr = np.empty(n)
    if n == 0:
        return fit_arr
    cdef double[::1] fit = fit_arr
    mean_arr = np.empty(n)
    weight_arr = np.empty(n)
    start_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] mean = mean_arr
    cdef double[::1] weight = weight_arr
    cdef cnp.int64_t[::1] start = start_arr
    cdef double wsum
    for i in range(n):
        top += 1
        mean[top] = yv[i]
        weight[top] = wv[i]
        start[top] = i
        while top > 0 and mean[top - 1] > mean[top]:
            wsum = weight[top - 1] + weight[top]
            mean[top - 1] = (mean[top - 1] * weight[top - 1] + mean[top] * weight[top]) / wsum
            weight[top - 1] = wsum
            top -= 1
    for i in range(top + 1):
        j = start[i + 1] if i < top else n
        for idx in range(start[i], j):
            fit[idx] = mean[i]
    return fit_arr
