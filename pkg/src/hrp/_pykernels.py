"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``.

Same signatures, same array layouts. Used when the extension is not
built or when ``HRP_KERNELS=python`` is set.
"""

import numpy as np
from scipy.special import expit


def lstm_forward(X, W, b):
    B, L, F = X.shape
    m = W.shape[0] // 4
    K = W.shape[1]
    if K != m + F or b.shape[0] != 4 * m:
        raise ValueError("weight shape does not match input features")

    Z = np.zeros((L, B, K))
    G = np.empty((L, B, 4 * m))
    C = np.zeros((L + 1, B, m))
    TC = np.empty((L, B, m))
    h = np.zeros((B, m))
    for t in range(L):
        Z[t, :, :m] = h
        Z[t, :, m:] = X[:, t, :]
        pre = Z[t] @ W.T + b
        G[t, :, :2 * m] = expit(pre[:, :2 * m])
        G[t, :, 2 * m:3 * m] = np.tanh(pre[:, 2 * m:3 * m])
        G[t, :, 3 * m:] = expit(pre[:, 3 * m:])
        f, i, g, o = G[t, :, :m], G[t, :, m:2 * m], G[t, :, 2 * m:3 * m], G[t, :, 3 * m:]
        C[t + 1] = f * C[t] + i * g
        TC[t] = np.tanh(C[t + 1])
        h = o * TC[t]
    return Z, G, C, TC, h


def lstm_backward(dh_final, W, Z, G, C, TC):
    L, B, K = Z.shape
    m = W.shape[0] // 4
    dW = np.zeros_like(W)
    db = np.zeros(4 * m)
    dh = np.array(dh_final, dtype=float, copy=True)
    dc = np.zeros((B, m))
    dP = np.empty((B, 4 * m))
    for t in range(L - 1, -1, -1):
        f, i, g, o = G[t, :, :m], G[t, :, m:2 * m], G[t, :, 2 * m:3 * m], G[t, :, 3 * m:]
        tc = TC[t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dP[:, :m] = dc * C[t] * f * (1.0 - f)
        dP[:, m:2 * m] = dc * g * i * (1.0 - i)
        dP[:, 2 * m:3 * m] = dc * i * (1.0 - g * g)
        dP[:, 3 * m:] = dh * tc * o * (1.0 - o)
        dc = dc * f
        db += dP.sum(axis=0)
        dW += dP.T @ Z[t]
        if t > 0:
            dh = (dP @ W)[:, :m]
    return dW, db


def se_kernel_matrix(A, Bm, tau, eta):
    if A.shape[1] != Bm.shape[1]:
        raise ValueError("dimension mismatch between kernel inputs")
    sq = ((A[:, None, :] - Bm[None, :, :]) ** 2).sum(axis=-1)
    return tau * tau * np.exp(-0.5 * sq / (eta * eta))
