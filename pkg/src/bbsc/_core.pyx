# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the pursuit hot loop.

Same API as bbsc._core_py: a multi-layer dense forward over a batch of
candidate codes plus the three per-candidate bound scores. Matrix products
go through BLAS dgemm; activations and scoring are fused C loops, so a
kernel call costs one Python round-trip regardless of layer count or
candidate batch size.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, log1p, INFINITY, isfinite, M_PI
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

ACT_IDENTITY = 0
ACT_RELU = 1
ACT_SIGMOID = 2
ACT_SOFTMAX = 3

BERN_EPS = 1e-12

cdef double _BERN_EPS = 1e-12


cdef inline double _sigmoid1(double p) nogil:
    cdef double e
    if p >= 0.0:
        return 1.0 / (1.0 + exp(-p))
    e = exp(p)
    return e / (1.0 + e)


cdef void _matmul_bt(double[:, ::1] A, double[:, ::1] W, double[:, ::1] out) nogil:
    # out = A @ W.T for C-contiguous buffers via Fortran dgemm:
    # out^T = W @ A^T, and each C matrix viewed in Fortran order is its
    # own transpose.
    cdef int m = <int> W.shape[0]      # out columns in Fortran view
    cdef int n = <int> A.shape[0]      # batch
    cdef int k = <int> A.shape[1]      # shared inner dim
    cdef double one = 1.0, zero = 0.0
    cdef char ta = b'T', tb = b'N'
    if m == 0 or n == 0:
        return
    if k == 0:
        out[:, :] = 0.0
        return
    dgemm(&ta, &tb, &m, &n, &k, &one, &W[0, 0], &k, &A[0, 0], &k, &zero, &out[0, 0], &m)


cdef void _bias_act(double[:, ::1] out, double[::1] b, int act) nogil:
    cdef Py_ssize_t B = out.shape[0]
    cdef Py_ssize_t n_out = out.shape[1]
    cdef Py_ssize_t i, o
    cdef double v, m, s
    for i in range(B):
        for o in range(n_out):
            out[i, o] += b[o]
        if act == 1:  # relu
            for o in range(n_out):
                if out[i, o] < 0.0:
                    out[i, o] = 0.0
        elif act == 2:  # sigmoid
            for o in range(n_out):
                out[i, o] = _sigmoid1(out[i, o])
        elif act == 3:  # softmax, shifted by the row max
            m = out[i, 0]
            for o in range(1, n_out):
                if out[i, o] > m:
                    m = out[i, o]
            s = 0.0
            for o in range(n_out):
                v = exp(out[i, o] - m)
                out[i, o] = v
                s += v
            for o in range(n_out):
                out[i, o] /= s


def forward_batch(Z, weights, biases, acts):
    """Run a batch of codes through the dense layer stack.

    Z is (B, K) float64; weights[l] is (out, in), biases[l] is (out,),
    acts[l] an activation code. Returns the (B, out_last) activations.
    """
    cdef cnp.ndarray[double, ndim=2] A = np.ascontiguousarray(Z, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] nxt
    cdef int act
    for W, b, a in zip(weights, biases, acts):
        act = a
        nxt = np.empty((A.shape[0], (<object> W).shape[0]), dtype=np.float64)
        _matmul_bt(A, W, nxt)
        _bias_act(nxt, b, act)
        A = nxt
    return A


def gauss_marginal_scores(double[:, ::1] F, double[::1] x, double sigma2, double c):
    """Log density of x with the per-datum scale integrated out, one per row of F.

    Includes the code-independent normalizer so the result is a proper
    log density, not just a score.
    """
    cdef Py_ssize_t B = F.shape[0]
    cdef Py_ssize_t D = F.shape[1]
    if x.shape[0] != D:
        raise ValueError("data/decoder-output length mismatch")
    cdef cnp.ndarray[double, ndim=1] out = np.empty(B, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, d
    cdef double ff, fx, xx = 0.0, quad, kappa
    for d in range(D):
        xx += x[d] * x[d]
    kappa = -0.5 * D * log(2.0 * M_PI * sigma2)
    with nogil:
        for i in range(B):
            ff = 0.0
            fx = 0.0
            for d in range(D):
                ff += F[i, d] * F[i, d]
                fx += F[i, d] * x[d]
            quad = xx / sigma2 - (fx * fx) / (sigma2 * (sigma2 / c + ff))
            ov[i] = -0.5 * (log1p((c / sigma2) * ff) + quad) + kappa
    return out


def bern_scores(double[:, ::1] F, double[::1] x):
    """Bernoulli log likelihood of binary x for each mean vector in F.

    Means are clamped away from 0/1 so saturated sigmoid outputs cannot
    produce non-finite scores.
    """
    cdef Py_ssize_t B = F.shape[0]
    cdef Py_ssize_t D = F.shape[1]
    if x.shape[0] != D:
        raise ValueError("data/decoder-output length mismatch")
    cdef cnp.ndarray[double, ndim=1] out = np.empty(B, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, d
    cdef double s, f
    with nogil:
        for i in range(B):
            s = 0.0
            for d in range(D):
                f = F[i, d]
                if f < _BERN_EPS:
                    f = _BERN_EPS
                elif f > 1.0 - _BERN_EPS:
                    f = 1.0 - _BERN_EPS
                # binary x: exactly one of the two terms survives
                if x[d] != 0.0:
                    s += x[d] * log(f)
                else:
                    s += log1p(-f)
            ov[i] = s
    return out


def poiss_scores(double[:, ::1] F, double[:, ::1] beta, double[::1] x, double e_lam):
    """Expected Poisson bound for each topic-distribution row of F.

    Computes sum_w x_w*log(phi_w) - e_lam*phi_w with phi = beta @ f.
    Rows whose support misses a positive count score -inf (rejected by
    pursuit as an ordinary candidate, never raised).
    """
    cdef Py_ssize_t B = F.shape[0]
    cdef Py_ssize_t T = F.shape[1]
    cdef Py_ssize_t W = beta.shape[0]
    if beta.shape[1] != T:
        raise ValueError("topic-matrix/decoder-output width mismatch")
    if x.shape[0] != W:
        raise ValueError("count/topic-matrix length mismatch")
    cdef cnp.ndarray[double, ndim=2] Phi = np.empty((B, W), dtype=np.float64)
    cdef double[:, ::1] pv = Phi
    _matmul_bt(F, beta, pv)
    cdef cnp.ndarray[double, ndim=1] out = np.empty(B, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, w
    cdef double phi, s, phisum
    cdef bint dead
    with nogil:
        for i in range(B):
            s = 0.0
            phisum = 0.0
            dead = False
            for w in range(W):
                phi = pv[i, w]
                phisum += phi
                if x[w] > 0.0:
                    if phi > 0.0:
                        s += x[w] * log(phi)
                    else:
                        dead = True
            if dead or not isfinite(s):
                ov[i] = -INFINITY
            else:
                ov[i] = s - e_lam * phisum
    return out
