"""Pooling strategies for sets of feature vectors.

Three ways to fuse a template (an ordered set of instances) into one
D-dimensional representation:

  average   plain arithmetic mean of the embeddings
  instance  one learned quality scalar per instance, softmax over the set
  cfan      one learned quality value per instance per component, softmax
            per component across the set (component-wise aggregation)

The quality head is a batch-norm layer followed by a fully connected
layer applied to each instance's feature map. Instance mode is the same
head with output dimension 1, broadcast across components at pooling
time, so both learned modes share one code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import core
from .backend import kernels as K
from .core import BatchNormParams, LinearParams

MODES = ("average", "instance", "cfan")


@dataclass
class FeatureInstance:
    """One observation: the quality-head input paired with the embedding."""

    feature_map: np.ndarray  # (M,)
    embedding: np.ndarray  # (D,)

    def __post_init__(self):
        self.feature_map = core.as_vector(self.feature_map)
        self.embedding = core.as_vector(self.embedding)


@dataclass
class Template:
    subject_id: str
    instances: list[FeatureInstance] = field(default_factory=list)

    def stacked(self):
        """(N x M maps, N x D embeddings) arrays for this template."""
        maps = np.stack([i.feature_map for i in self.instances])
        emb = np.stack([i.embedding for i in self.instances])
        return maps, emb


@dataclass
class QualityHead:
    """Trainable quality predictor: batch norm then a fully connected layer.

    mode 'cfan' predicts one quality per component (fc output dim D);
    mode 'instance' predicts a single scalar per instance (fc output dim 1).
    """

    bn: BatchNormParams
    fc: LinearParams
    mode: str = "cfan"

    def __post_init__(self):
        if self.mode not in ("cfan", "instance"):
            raise ValueError(f"head mode must be 'cfan' or 'instance', got {self.mode!r}")
        if self.mode == "instance" and self.fc.bias.shape[0] != 1:
            raise ValueError("instance-mode head must have output dimension 1")

    @property
    def map_dim(self) -> int:
        return self.fc.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.fc.bias.shape[0]


@dataclass
class AggregatedRep:
    vector: np.ndarray  # (D,), always, independent of the set size
    mode: str
    n_instances: int


def quality_forward(maps, head: QualityHead, stats: str = "frozen", out_dim: int | None = None):
    """Quality values for N instances: Q = linear(batchnorm(maps)).

    stats='train' normalizes with the current batch statistics and returns
    a cache for the backward pass; stats='frozen' applies the stored
    running statistics (inference) and returns cache=None. In instance
    mode the single output column is replicated across ``out_dim``
    components (defaults to the fc width in cfan mode, which makes the
    argument relevant only for instance-mode heads).
    """
    maps = core.as_matrix(maps)
    if maps.shape[0] == 0:
        raise ValueError("empty set")
    if stats == "train":
        Y, bn_cache = core.batchnorm_forward(maps, head.bn)
    elif stats == "frozen":
        Y = core.batchnorm_inference(maps, head.bn)
        bn_cache = None
    else:
        raise ValueError("stats must be 'train' or 'frozen'")
    Q = core.linear_forward(Y, head.fc)
    if head.mode == "instance":
        Q = np.repeat(Q, out_dim if out_dim is not None else 1, axis=1)
    cache = None if bn_cache is None else (bn_cache, Y)
    return Q, cache


def pool_average(F) -> AggregatedRep:
    F = core.as_matrix(F)
    n = F.shape[0]
    vec = F.mean(axis=0) if n > 0 else np.zeros(F.shape[1])
    return AggregatedRep(vec, "average", n)


def pool_instance(F, q) -> AggregatedRep:
    """Softmax over N per-instance scalars, then a weighted sum of rows."""
    F = core.as_matrix(F)
    q = core.as_vector(q)
    n = F.shape[0]
    if n == 0:
        return AggregatedRep(np.zeros(F.shape[1]), "instance", 0)
    if q.shape[0] != n:
        raise ValueError("need exactly one quality scalar per instance")
    w = core.softmax_over_set(q[:, None])
    return AggregatedRep((w * F).sum(axis=0), "instance", n)


def pool_cfan(F, Q) -> AggregatedRep:
    """Component-wise fusion: r_j = sum_i w_ij f_ij, W = softmax_over_set(Q)."""
    F = core.as_matrix(F)
    Q = core.as_matrix(Q)
    n = F.shape[0]
    if n == 0:
        return AggregatedRep(np.zeros(F.shape[1]), "cfan", 0)
    if Q.shape != F.shape:
        raise ValueError("quality matrix must match embedding matrix shape")
    W = core.softmax_over_set(Q)
    return AggregatedRep((W * F).sum(axis=0), "cfan", n)


def pool_cfan_backward(dR, cache):
    """Gradient of pool_cfan w.r.t. embeddings and qualities.

    ``cache`` is (W, F): the softmax weights produced in the forward pass
    and the embeddings that were pooled. Returns (dF, dQ).
    """
    dR = core.as_vector(dR)
    W, F = cache
    W = core.as_matrix(W)
    F = core.as_matrix(F)
    if W.shape != F.shape or dR.shape[0] != F.shape[1]:
        raise ValueError("cache shapes do not match upstream gradient")
    return K.softmax_pool_backward(dR, W, F)


def aggregate_template(
    template: Template,
    head: QualityHead | None,
    mode: str,
    dim: int | None = None,
) -> AggregatedRep:
    """Fuse one template under the given mode.

    An empty template maps to the zero vector in every mode; its dimension
    comes from ``dim``, or from the head when one is given.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode != "average":
        if head is None:
            raise ValueError(f"mode {mode!r} requires a quality head")
        expected = "instance" if mode == "instance" else "cfan"
        if head.mode != expected:
            raise ValueError(f"mode {mode!r} needs a head in {expected!r} mode, got {head.mode!r}")
    n = len(template.instances)
    if n == 0:
        if dim is None and mode == "cfan" and head is not None:
            dim = head.out_dim
        if dim is None:
            raise ValueError("cannot infer dimension of an empty template; pass dim")
        return AggregatedRep(np.zeros(dim), mode, 0)
    maps, emb = template.stacked()
    if mode == "average":
        return pool_average(emb)
    if mode == "instance":
        Q, _ = quality_forward(maps, head, stats="frozen")
        return pool_instance(emb, Q[:, 0])
    Q, _ = quality_forward(maps, head, stats="frozen")
    return pool_cfan(emb, Q)
