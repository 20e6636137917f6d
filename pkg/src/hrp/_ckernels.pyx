# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the recurrent extractor and the SE covariance.

Array layout is row-major throughout; BLAS is column-major, so every
``dgemm`` call below is written against the transposed views.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sigmoid(double z) noexcept nogil:
    # exp(-z) may overflow to inf for very negative z, giving exactly 0
    return 1.0 / (1.0 + exp(-z))


def lstm_forward(double[:, :, ::1] X, double[:, ::1] W, double[::1] b):
    """Unroll the gated cell over a batch of windows.

    Returns ``(Z, G, C, TC, h)`` where ``Z[t]`` is the concatenated
    ``[h_{t-1}, x_t]`` input, ``G[t]`` the activated gates (f, i, g, o),
    ``C[t+1]`` the cell state after step ``t`` and ``TC[t] = tanh(C[t+1])``.
    """
    cdef int B = X.shape[0], L = X.shape[1], F = X.shape[2]
    cdef int G4 = W.shape[0], m = G4 // 4, K = W.shape[1]
    if K != m + F or b.shape[0] != G4:
        raise ValueError("weight shape does not match input features")

    Z_arr = np.zeros((L, B, K))
    G_arr = np.empty((L, B, G4))
    C_arr = np.zeros((L + 1, B, m))
    TC_arr = np.empty((L, B, m))
    h_arr = np.zeros((B, m))
    cdef double[:, :, ::1] Z = Z_arr
    cdef double[:, :, ::1] G = G_arr
    cdef double[:, :, ::1] C = C_arr
    cdef double[:, :, ::1] TC = TC_arr
    cdef double[:, ::1] h = h_arr

    cdef int t, r, j
    cdef double one = 1.0, zero = 0.0
    cdef char tr = b'T', nt = b'N'
    cdef double f, i, g, o, c

    with nogil:
        for t in range(L):
            for r in range(B):
                for j in range(m):
                    Z[t, r, j] = h[r, j]
                for j in range(F):
                    Z[t, r, m + j] = X[r, t, j]
            # G[t] (B x 4m) = Z[t] (B x K) @ W.T
            dgemm(&tr, &nt, &G4, &B, &K, &one, &W[0, 0], &K,
                  &Z[t, 0, 0], &K, &zero, &G[t, 0, 0], &G4)
            for r in range(B):
                for j in range(m):
                    f = _sigmoid(G[t, r, j] + b[j])
                    i = _sigmoid(G[t, r, m + j] + b[m + j])
                    g = tanh(G[t, r, 2 * m + j] + b[2 * m + j])
                    o = _sigmoid(G[t, r, 3 * m + j] + b[3 * m + j])
                    G[t, r, j] = f
                    G[t, r, m + j] = i
                    G[t, r, 2 * m + j] = g
                    G[t, r, 3 * m + j] = o
                    c = f * C[t, r, j] + i * g
                    C[t + 1, r, j] = c
                    c = tanh(c)
                    TC[t, r, j] = c
                    h[r, j] = o * c
    return Z_arr, G_arr, C_arr, TC_arr, h_arr


def lstm_backward(double[:, ::1] dh_final, double[:, ::1] W,
                  double[:, :, ::1] Z, double[:, :, ::1] G,
                  double[:, :, ::1] C, double[:, :, ::1] TC):
    """Backpropagate a gradient on the final hidden state through time.

    Returns ``(dW, db)`` accumulated over the batch and all time steps.
    """
    cdef int L = Z.shape[0], B = Z.shape[1], K = Z.shape[2]
    cdef int G4 = W.shape[0], m = G4 // 4

    dW_arr = np.zeros((G4, K))
    db_arr = np.zeros(G4)
    dh_arr = np.array(dh_final, copy=True)
    dc_arr = np.zeros((B, m))
    dP_arr = np.empty((B, G4))
    dZ_arr = np.empty((B, K))
    cdef double[:, ::1] dW = dW_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] dh = dh_arr
    cdef double[:, ::1] dc = dc_arr
    cdef double[:, ::1] dP = dP_arr
    cdef double[:, ::1] dZ = dZ_arr

    cdef int t, r, j
    cdef double one = 1.0, zero = 0.0
    cdef char tr = b'T', nt = b'N'
    cdef double f, i, g, o, tc, dcj, dhj

    with nogil:
        for t in range(L - 1, -1, -1):
            for r in range(B):
                for j in range(m):
                    f = G[t, r, j]
                    i = G[t, r, m + j]
                    g = G[t, r, 2 * m + j]
                    o = G[t, r, 3 * m + j]
                    tc = TC[t, r, j]
                    dhj = dh[r, j]
                    dcj = dc[r, j] + dhj * o * (1.0 - tc * tc)
                    dP[r, j] = dcj * C[t, r, j] * f * (1.0 - f)
                    dP[r, m + j] = dcj * g * i * (1.0 - i)
                    dP[r, 2 * m + j] = dcj * i * (1.0 - g * g)
                    dP[r, 3 * m + j] = dhj * tc * o * (1.0 - o)
                    dc[r, j] = dcj * f
            for r in range(B):
                for j in range(G4):
                    db[j] += dP[r, j]
            # dW (4m x K) += dP.T @ Z[t]
            dgemm(&nt, &tr, &K, &G4, &B, &one, &Z[t, 0, 0], &K,
                  &dP[0, 0], &G4, &one, &dW[0, 0], &K)
            if t > 0:
                # dZ (B x K) = dP @ W
                dgemm(&nt, &nt, &K, &B, &G4, &one, &W[0, 0], &K,
                      &dP[0, 0], &G4, &zero, &dZ[0, 0], &K)
                for r in range(B):
                    for j in range(m):
                        dh[r, j] = dZ[r, j]
    return dW_arr, db_arr


def se_kernel_matrix(double[:, ::1] A, double[:, ::1] Bm, double tau, double eta):
    """Squared-exponential covariance between the rows of ``A`` and ``Bm``."""
    cdef Py_ssize_t n = A.shape[0], p = Bm.shape[0], d = A.shape[1]
    if Bm.shape[1] != d:
        raise ValueError("dimension mismatch between kernel inputs")
    K_arr = np.empty((n, p))
    cdef double[:, ::1] K = K_arr
    cdef double amp = tau * tau, scale = -0.5 / (eta * eta)
    cdef double s, diff
    cdef Py_ssize_t r, c, k
    with nogil:
        for r in range(n):
            for c in range(p):
                s = 0.0
                for k in range(d):
                    diff = A[r, k] - Bm[c, k]
                    s = s + diff * diff
                K[r, c] = amp * exp(scale * s)
    return K_arr
