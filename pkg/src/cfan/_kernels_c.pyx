# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Same contract as cfan._kernels_py.

Elementwise and reduction loops are typed C; the two matrix products
(Gram matrices for distances and cosine scores) stay on BLAS through
numpy, which a hand loop cannot beat.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def bn_forward(double[:, ::1] X, double[::1] gamma, double[::1] beta, double eps):
    cdef Py_ssize_t N = X.shape[0], M = X.shape[1], i, j
    Y_arr = np.empty((N, M)); xhat_arr = np.empty((N, M))
    inv_arr = np.empty(M); mean_arr = np.zeros(M); var_arr = np.zeros(M)
    cdef double[:, ::1] Y = Y_arr, xhat = xhat_arr
    cdef double[::1] inv_std = inv_arr, mean = mean_arr, var = var_arr
    cdef double d
    for i in range(N):
        for j in range(M):
            mean[j] += X[i, j]
    for j in range(M):
        mean[j] /= N
    for i in range(N):
        for j in range(M):
            d = X[i, j] - mean[j]
            var[j] += d * d
    for j in range(M):
        var[j] /= N
        inv_std[j] = 1.0 / sqrt(var[j] + eps)
    for i in range(N):
        for j in range(M):
            xhat[i, j] = (X[i, j] - mean[j]) * inv_std[j]
            Y[i, j] = gamma[j] * xhat[i, j] + beta[j]
    return Y_arr, xhat_arr, inv_arr, mean_arr, var_arr


def bn_forward_frozen(double[:, ::1] X, double[::1] gamma, double[::1] beta,
                      double[::1] mean, double[::1] var, double eps):
    cdef Py_ssize_t N = X.shape[0], M = X.shape[1], i, j
    Y_arr = np.empty((N, M))
    cdef double[:, ::1] Y = Y_arr
    cdef double inv
    for j in range(M):
        inv = 1.0 / sqrt(var[j] + eps)
        for i in range(N):
            Y[i, j] = gamma[j] * ((X[i, j] - mean[j]) * inv) + beta[j]
    return Y_arr


def bn_backward(double[:, ::1] dY, double[:, ::1] xhat, double[::1] inv_std,
                double[::1] gamma):
    cdef Py_ssize_t N = dY.shape[0], M = dY.shape[1], i, j
    dX_arr = np.empty((N, M)); dg_arr = np.zeros(M); db_arr = np.zeros(M)
    s1_arr = np.zeros(M); s2_arr = np.zeros(M)
    cdef double[:, ::1] dX = dX_arr
    cdef double[::1] dgamma = dg_arr, dbeta = db_arr, s1 = s1_arr, s2 = s2_arr
    cdef double dxh
    for i in range(N):
        for j in range(M):
            dgamma[j] += dY[i, j] * xhat[i, j]
            dbeta[j] += dY[i, j]
            dxh = dY[i, j] * gamma[j]
            s1[j] += dxh
            s2[j] += dxh * xhat[i, j]
    for i in range(N):
        for j in range(M):
            dxh = dY[i, j] * gamma[j]
            dX[i, j] = (inv_std[j] / N) * (N * dxh - s1[j] - xhat[i, j] * s2[j])
    return dX_arr, dg_arr, db_arr


def softmax_columns(double[:, ::1] Q):
    cdef Py_ssize_t N = Q.shape[0], D = Q.shape[1], i, j
    W_arr = np.empty((N, D))
    cdef double[:, ::1] W = W_arr
    cdef double m, s
    for j in range(D):
        m = Q[0, j]
        for i in range(1, N):
            if Q[i, j] > m:
                m = Q[i, j]
        s = 0.0
        for i in range(N):
            W[i, j] = exp(Q[i, j] - m)
            s += W[i, j]
        for i in range(N):
            W[i, j] /= s
    return W_arr


def softmax_pool_backward(double[::1] dR, double[:, ::1] W, double[:, ::1] F):
    cdef Py_ssize_t N = W.shape[0], D = W.shape[1], i, j
    dF_arr = np.empty((N, D)); dQ_arr = np.empty((N, D)); c_arr = np.zeros(D)
    cdef double[:, ::1] dF = dF_arr, dQ = dQ_arr
    cdef double[::1] c = c_arr
    cdef double g
    for i in range(N):
        for j in range(D):
            dF[i, j] = W[i, j] * dR[j]
            c[j] += W[i, j] * (dR[j] * F[i, j])
    for i in range(N):
        for j in range(D):
            g = dR[j] * F[i, j]
            dQ[i, j] = W[i, j] * (g - c[j])
    return dF_arr, dQ_arr


def sq_dist_matrix(R):
    Rc = np.ascontiguousarray(R)
    G = Rc @ Rc.T
    return _sq_from_gram(G)


cdef _sq_from_gram(double[:, ::1] G):
    cdef Py_ssize_t T = G.shape[0], a, b
    sq_arr = np.empty((T, T))
    cdef double[:, ::1] sq = sq_arr
    cdef double v
    for a in range(T):
        for b in range(T):
            v = G[a, a] - 2.0 * G[a, b] + G[b, b]
            sq[a, b] = v if v > 0.0 else 0.0
    return sq_arr


def cosine_matrix(P, G):
    Pc = np.ascontiguousarray(P); Gc = np.ascontiguousarray(G)
    S = Pc @ Gc.T
    return _cosine_normalize(S, Pc, Gc)


cdef _cosine_normalize(double[:, ::1] S, double[:, ::1] P, double[:, ::1] G):
    cdef Py_ssize_t np_ = P.shape[0], ng = G.shape[0], D = P.shape[1], i, j, k
    pn_arr = np.zeros(np_); gn_arr = np.zeros(ng)
    cdef double[::1] pn = pn_arr, gn = gn_arr
    cdef double s
    for i in range(np_):
        s = 0.0
        for k in range(D):
            s += P[i, k] * P[i, k]
        pn[i] = sqrt(s)
    for j in range(ng):
        s = 0.0
        for k in range(D):
            s += G[j, k] * G[j, k]
        gn[j] = sqrt(s)
    for i in range(np_):
        for j in range(ng):
            if pn[i] == 0.0 or gn[j] == 0.0:
                S[i, j] = -1.0
            else:
                S[i, j] = S[i, j] / (pn[i] * gn[j])
    return np.asarray(S)
