"""Reference numpy kernels.

Array-in, array-out building blocks shared by the library. The compiled
module ``cfan._kernels_c`` exports the same names with the same semantics;
``cfan.backend`` picks one of the two at import time. Inputs are assumed
to be C-contiguous float64, which the public wrappers in ``cfan.core``
guarantee.
"""

import numpy as np


def bn_forward(X, gamma, beta, eps):
    """Batch normalization over axis 0. Returns (Y, xhat, inv_std, mean, var)."""
    mean = X.mean(axis=0)
    var = X.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (X - mean) * inv_std
    Y = gamma * xhat + beta
    return Y, xhat, inv_std, mean, var


def bn_forward_frozen(X, gamma, beta, mean, var, eps):
    inv_std = 1.0 / np.sqrt(var + eps)
    return gamma * ((X - mean) * inv_std) + beta


def bn_backward(dY, xhat, inv_std, gamma):
    """Gradient of bn_forward w.r.t. its input and parameters.

    dX = (inv_std / N) * (N*dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
    with dxhat = dY * gamma, sums over the batch axis.
    """
    N = dY.shape[0]
    dgamma = (dY * xhat).sum(axis=0)
    dbeta = dY.sum(axis=0)
    dxhat = dY * gamma
    dX = (inv_std / N) * (
        N * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
    )
    return dX, dgamma, dbeta


def softmax_columns(Q):
    """Column-wise softmax over the set axis (axis 0), max-stabilized."""
    z = Q - Q.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def softmax_pool_backward(dR, W, F):
    """Backward of r = sum_i softmax_columns(Q)_i * F_i for one set.

    dR: (D,) upstream gradient, W: (N, D) softmax weights, F: (N, D).
    Returns (dF, dQ). dF_ij = w_ij * dR_j; dQ goes through the per-column
    softmax Jacobian: dQ = W * (g - colsum(W * g)) with g_ij = dR_j * F_ij.
    """
    dF = W * dR
    g = dR * F
    dQ = W * (g - (W * g).sum(axis=0, keepdims=True))
    return dF, dQ


def sq_dist_matrix(R):
    """Pairwise squared euclidean distances between rows of R, clipped at 0."""
    G = R @ R.T
    sq = np.diag(G)[:, None] - 2.0 * G + np.diag(G)[None, :]
    np.maximum(sq, 0.0, out=sq)
    return sq


def cosine_matrix(P, G):
    """Pairwise cosine similarity between rows of P and rows of G.

    Rows with zero norm score -1 against everything (the empty-template
    convention), on either side.
    """
    pn = np.linalg.norm(P, axis=1)
    gn = np.linalg.norm(G, axis=1)
    S = P @ G.T
    safe_p = np.where(pn > 0.0, pn, 1.0)
    safe_g = np.where(gn > 0.0, gn, 1.0)
    S /= safe_p[:, None]
    S /= safe_g[None, :]
    S[pn == 0.0, :] = -1.0
    S[:, gn == 0.0] = -1.0
    return S
