"""Dense numeric primitives with exact analytic backward passes.

Everything here operates on 64-bit float arrays. Gradients are derived
by hand; there is no autodiff anywhere in the package, which is why each
backward op is paired with a finite-difference test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import kernels as K

# running-statistics update factor, frozen stats = 0.9*old + 0.1*batch
BN_MOMENTUM = 0.9


def as_matrix(X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {X.shape}")
    return X


def as_vector(v) -> np.ndarray:
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d array, got shape {v.shape}")
    return v


@dataclass
class BatchNormParams:
    """Scale/shift of one batch normalization layer plus its frozen statistics.

    ``running_mean``/``running_var`` accumulate batch statistics during
    training (see ``update_running_stats``) and are the statistics applied
    at inference.
    """

    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5
    running_mean: np.ndarray = None  # type: ignore[assignment]
    running_var: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        self.gamma = as_vector(self.gamma)
        self.beta = as_vector(self.beta)
        if self.gamma.shape != self.beta.shape:
            raise ValueError("gamma and beta must have the same dimension")
        # eps 0 is legal on non-constant batches (exact normalization)
        if not self.eps >= 0:
            raise ValueError("eps must be nonnegative")
        if self.running_mean is None:
            self.running_mean = np.zeros_like(self.gamma)
        if self.running_var is None:
            self.running_var = np.ones_like(self.gamma)
        self.running_mean = as_vector(self.running_mean)
        self.running_var = as_vector(self.running_var)


@dataclass
class LinearParams:
    weight: np.ndarray  # (M, D)
    bias: np.ndarray  # (D,)

    def __post_init__(self):
        self.weight = as_matrix(self.weight)
        self.bias = as_vector(self.bias)
        if self.weight.shape[1] != self.bias.shape[0]:
            raise ValueError("weight columns must match bias dimension")


def softmax_over_set(Q) -> np.ndarray:
    """Column-wise softmax across the rows of Q (the set axis).

    Every output column sums to 1; a single row maps to all-ones.
    Stabilized by per-column max subtraction.
    """
    Q = as_matrix(Q)
    if Q.shape[0] == 0:
        raise ValueError("empty set")
    return K.softmax_columns(Q)


def batchnorm_forward(X, p: BatchNormParams):
    """Normalize each column over the current batch, then scale and shift.

    Returns (Y, cache); the cache feeds batchnorm_backward and also carries
    the batch mean/var needed for running-statistics updates.
    """
    X = as_matrix(X)
    if X.shape[0] < 1:
        raise ValueError("batch must contain at least one row")
    if X.shape[1] != p.gamma.shape[0]:
        raise ValueError("input width does not match batch-norm dimension")
    Y, xhat, inv_std, mean, var = K.bn_forward(X, p.gamma, p.beta, p.eps)
    return Y, (xhat, inv_std, mean, var, p.gamma)


def batchnorm_inference(X, p: BatchNormParams) -> np.ndarray:
    """Forward pass using the frozen running statistics."""
    X = as_matrix(X)
    if X.shape[1] != p.gamma.shape[0]:
        raise ValueError("input width does not match batch-norm dimension")
    return K.bn_forward_frozen(
        X, p.gamma, p.beta, p.running_mean, p.running_var, p.eps
    )


def batchnorm_backward(dY, cache):
    """Exact gradient of batchnorm_forward. Returns (dX, dGamma, dBeta)."""
    dY = as_matrix(dY)
    xhat, inv_std, _, _, gamma = cache
    if dY.shape != xhat.shape:
        raise ValueError(
            f"upstream gradient shape {dY.shape} does not match cache {xhat.shape}"
        )
    return K.bn_backward(dY, xhat, inv_std, gamma)


def update_running_stats(p: BatchNormParams, cache) -> None:
    _, _, mean, var, _ = cache
    p.running_mean = BN_MOMENTUM * p.running_mean + (1.0 - BN_MOMENTUM) * mean
    p.running_var = BN_MOMENTUM * p.running_var + (1.0 - BN_MOMENTUM) * var


def linear_forward(X, p: LinearParams) -> np.ndarray:
    X = as_matrix(X)
    if X.shape[1] != p.weight.shape[0]:
        raise ValueError("input width does not match weight rows")
    return X @ p.weight + p.bias


def linear_backward(X, dY, p: LinearParams):
    X = as_matrix(X)
    dY = as_matrix(dY)
    if X.shape[0] != dY.shape[0] or dY.shape[1] != p.weight.shape[1]:
        raise ValueError("gradient shape does not match inputs")
    dX = dY @ p.weight.T
    dW = X.T @ dY
    dB = dY.sum(axis=0)
    return dX, dW, dB


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between a and b; -1.0 if either has zero norm.

    The zero-norm convention makes empty-template representations (all
    zeros) rank last against every candidate instead of erroring.
    """
    a = as_vector(a)
    b = as_vector(b)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return -1.0
    return float(np.dot(a, b) / (na * nb))


def squared_euclidean(a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    d = a - b
    return float(np.dot(d, d))
