"""Triplet training of the quality head.

The base embeddings are frozen inputs; only the quality head (batch norm
plus one fully connected layer) learns. Each step samples a fresh batch
of templates, fuses them with the current head, mines hard triplets on
the fused representations and backpropagates the hinge loss through the
pooling, linear and batch-norm layers with hand-derived gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import core
from .aggregation import FeatureInstance, QualityHead
from .backend import kernels as K
from .core import BatchNormParams, LinearParams
from .synthetic import Mixer, NoiseModelConfig, make_mixer

PARAM_KEYS = ("gamma", "beta", "weight", "bias")


@dataclass
class TrainConfig:
    alpha: float = 1.0
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.01
    steps: int = 4000
    subjects_per_batch: int = 20
    templates_per_subject: int = 4
    images_per_template: int = 3
    rng_seed: int = 0
    noise_augment: str = "off"  # "off" or "gaussian <sigma>"
    l2_normalize: bool = False
    mining: str = "hard"  # "hard" (batch-hard) or "all" (exhaustive, ablation)

    def __post_init__(self):
        if self.templates_per_subject < 2:
            raise ValueError("templates_per_subject must be >= 2 (triplets need two templates of one subject)")
        if self.images_per_template < 1:
            raise ValueError("images_per_template must be >= 1")
        # lr 0 is a legal no-op configuration
        if not self.lr >= 0:
            raise ValueError("lr must be nonnegative")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.mining not in ("hard", "all"):
            raise ValueError("mining must be 'hard' or 'all'")
        self.augment_sigma()  # validate

    def augment_sigma(self) -> float | None:
        """Noise-augmentation scale, or None when augmentation is off."""
        if self.noise_augment == "off":
            return None
        parts = self.noise_augment.split()
        if len(parts) == 2 and parts[0] == "gaussian":
            sigma = float(parts[1])
            if sigma < 0:
                raise ValueError("augmentation sigma must be >= 0")
            return sigma
        raise ValueError(f"noise_augment must be 'off' or 'gaussian <sigma>', got {self.noise_augment!r}")


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, head: QualityHead) -> "OptimizerState":
        return cls(
            {
                "gamma": np.zeros_like(head.bn.gamma),
                "beta": np.zeros_like(head.bn.beta),
                "weight": np.zeros_like(head.fc.weight),
                "bias": np.zeros_like(head.fc.bias),
            }
        )


@dataclass
class Triplet:
    anchor: int
    positive: int
    negative: int


@dataclass
class BatchTemplate:
    label: str
    feature_maps: np.ndarray  # (I, M)
    embeddings: np.ndarray  # (I, D)


@dataclass
class TrainLogEntry:
    step: int
    loss: float
    active_triplets: int


def init_head(map_dim: int, dim: int, mode: str, rng: np.random.Generator) -> QualityHead:
    """Fresh head: identity batch norm, fc weight uniform in +-1/sqrt(M)."""
    out = dim if mode == "cfan" else 1
    bound = 1.0 / np.sqrt(map_dim)
    weight = rng.uniform(-bound, bound, (map_dim, out))
    return QualityHead(
        bn=BatchNormParams(np.ones(map_dim), np.zeros(map_dim)),
        fc=LinearParams(weight, np.zeros(out)),
        mode=mode,
    )


def sample_batch(dataset, cfg: TrainConfig, rng: np.random.Generator) -> list[BatchTemplate]:
    """Random templates for one step: subjects without replacement, then a
    permutation of each subject's instances partitioned into fixed-size
    templates."""
    subjects = dataset.subjects
    if len(subjects) < cfg.subjects_per_batch:
        raise ValueError(
            f"dataset has {len(subjects)} subjects, batch needs {cfg.subjects_per_batch}"
        )
    need = cfg.templates_per_subject * cfg.images_per_template
    chosen = rng.choice(len(subjects), cfg.subjects_per_batch, replace=False)
    batch = []
    for s in chosen:
        subj = subjects[s]
        avail = subj.embeddings.shape[0]
        if avail < need:
            raise ValueError(
                f"subject {subj.subject_id} has {avail} instances, need {need}"
            )
        perm = rng.permutation(avail)[:need]
        for t in range(cfg.templates_per_subject):
            idx = perm[t * cfg.images_per_template : (t + 1) * cfg.images_per_template]
            batch.append(
                BatchTemplate(
                    subj.subject_id,
                    np.ascontiguousarray(subj.feature_maps[idx]),
                    np.ascontiguousarray(subj.embeddings[idx]),
                )
            )
    return batch


def mine_hard_triplets(reps, labels) -> list[Triplet]:
    """Batch-hard mining: per anchor, the farthest same-label template and
    the closest different-label one (squared euclidean, ties to the lowest
    index). Anchors without a positive or a negative are skipped."""
    reps = core.as_matrix(reps)
    labels = np.asarray(labels, dtype=object)
    if reps.shape[0] != labels.shape[0]:
        raise ValueError("one label per representation required")
    sq = K.sq_dist_matrix(reps)
    out = []
    for a in range(reps.shape[0]):
        same = labels == labels[a]
        diff = ~same
        same[a] = False
        if not same.any() or not diff.any():
            continue
        pos_idx = np.flatnonzero(same)
        neg_idx = np.flatnonzero(diff)
        p = pos_idx[np.argmax(sq[a, pos_idx])]
        n = neg_idx[np.argmin(sq[a, neg_idx])]
        out.append(Triplet(a, int(p), int(n)))
    return out


def mine_all_triplets(labels) -> list[Triplet]:
    """Exhaustive (anchor, positive, negative) enumeration, for ablation."""
    labels = np.asarray(labels, dtype=object)
    out = []
    for a in range(labels.shape[0]):
        same = labels == labels[a]
        same[a] = False
        for p in np.flatnonzero(same):
            for n in np.flatnonzero(~(labels == labels[a])):
                out.append(Triplet(a, int(p), int(n)))
    return out


def triplet_loss(reps, triplets, alpha: float):
    """Sum of hinge terms [alpha + d(a,p) - d(a,n)]_+ and its gradient.

    d is squared euclidean. The subgradient at a hinge boundary of exactly
    zero takes the zero branch, so satisfied triplets never push.
    """
    loss, dReps, _ = _triplet_loss_core(reps, triplets, alpha)
    return loss, dReps


def _triplet_loss_core(reps, triplets, alpha: float):
    reps = core.as_matrix(reps)
    dReps = np.zeros_like(reps)
    if not triplets:
        return 0.0, dReps, 0
    A = np.array([t.anchor for t in triplets])
    P = np.array([t.positive for t in triplets])
    N = np.array([t.negative for t in triplets])
    ap = reps[A] - reps[P]
    an = reps[A] - reps[N]
    hinge = alpha + (ap * ap).sum(axis=1) - (an * an).sum(axis=1)
    active = hinge > 0
    loss = float(hinge[active].sum())
    if active.any():
        Aa, Pa, Na = A[active], P[active], N[active]
        np.add.at(dReps, Aa, 2.0 * (reps[Na] - reps[Pa]))
        np.add.at(dReps, Pa, 2.0 * (reps[Pa] - reps[Aa]))
        np.add.at(dReps, Na, 2.0 * (reps[Aa] - reps[Na]))
    return loss, dReps, int(active.sum())


def _forward(batch: list[BatchTemplate], head: QualityHead, l2_normalize: bool):
    """Fused representations for a whole batch in training mode.

    Batch norm runs over all stacked instances at once (the full
    mini-batch is the normalization axis), then each template is pooled
    separately. Returns the representations and every cache the backward
    pass needs.
    """
    maps = np.concatenate([t.feature_maps for t in batch])
    bounds = np.cumsum([0] + [t.feature_maps.shape[0] for t in batch])
    dim = batch[0].embeddings.shape[1]
    Y, bn_cache = core.batchnorm_forward(maps, head.bn)
    Q = core.linear_forward(Y, head.fc)
    Qe = np.repeat(Q, dim, axis=1) if head.mode == "instance" else Q
    T = len(batch)
    reps = np.empty((T, dim))
    weights = []
    for t in range(T):
        W = K.softmax_columns(np.ascontiguousarray(Qe[bounds[t] : bounds[t + 1]]))
        weights.append(W)
        reps[t] = (W * batch[t].embeddings).sum(axis=0)
    norms = None
    if l2_normalize:
        norms = np.linalg.norm(reps, axis=1, keepdims=True)
        if not (norms > 0).all():
            raise FloatingPointError("cannot normalize a zero-norm representation")
        reps = reps / norms
    return reps, (bn_cache, Y, weights, bounds, norms)


def _backward(dReps, batch, head: QualityHead, caches, reps_out):
    bn_cache, Y, weights, bounds, norms = caches
    if norms is not None:
        # reps_out = reps / norms; pull the gradient back through the
        # normalization: dr = (dr_n - r_n (r_n . dr_n)) / ||r||
        inner = (dReps * reps_out).sum(axis=1, keepdims=True)
        dReps = (dReps - reps_out * inner) / norms
    n_rows = Y.shape[0]
    dim = dReps.shape[1]
    dQe = np.empty((n_rows, dim))
    for t in range(len(batch)):
        _, dq = K.softmax_pool_backward(
            np.ascontiguousarray(dReps[t]), weights[t], batch[t].embeddings
        )
        dQe[bounds[t] : bounds[t + 1]] = dq
    if head.mode == "instance":
        dQ = dQe.sum(axis=1, keepdims=True)
    else:
        dQ = dQe
    _, dW, dB = core.linear_backward(Y, dQ, head.fc)
    dY = dQ @ head.fc.weight.T
    _, dgamma, dbeta = core.batchnorm_backward(dY, bn_cache)
    return {"gamma": dgamma, "beta": dbeta, "weight": dW, "bias": dB}


def _zero_grads(head: QualityHead):
    return {
        "gamma": np.zeros_like(head.bn.gamma),
        "beta": np.zeros_like(head.bn.beta),
        "weight": np.zeros_like(head.fc.weight),
        "bias": np.zeros_like(head.fc.bias),
    }


def sgd_update(head: QualityHead, grads, opt: OptimizerState, cfg: TrainConfig) -> None:
    """v <- momentum*v - lr*(g + weight_decay*theta); theta <- theta + v.

    Decay applies to every trainable parameter, including gamma and beta.
    """
    params = {
        "gamma": head.bn.gamma,
        "beta": head.bn.beta,
        "weight": head.fc.weight,
        "bias": head.fc.bias,
    }
    for k in PARAM_KEYS:
        g = grads[k] + cfg.weight_decay * params[k]
        v = cfg.momentum * opt.velocity[k] - cfg.lr * g
        opt.velocity[k] = v
        params[k] += v


def train_step(batch, head: QualityHead, opt: OptimizerState, cfg: TrainConfig):
    """One optimization step, mutating head and opt in place.

    Returns (loss, active_triplet_count).
    """
    reps, caches = _forward(batch, head, cfg.l2_normalize)
    labels = [t.label for t in batch]
    if cfg.mining == "hard":
        triplets = mine_hard_triplets(reps, labels)
    else:
        triplets = mine_all_triplets(labels)
    loss, dReps, n_active = _triplet_loss_core(reps, triplets, cfg.alpha)
    if not np.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss {loss} ({len(triplets)} triplets, {len(batch)} templates)"
        )
    if loss > 0.0:
        grads = _backward(dReps, batch, head, caches, reps)
    else:
        grads = _zero_grads(head)  # weight decay still applies below
    sgd_update(head, grads, opt, cfg)
    core.update_running_stats(head.bn, caches[0])
    return loss, n_active


def make_augmenter(noise_cfg: NoiseModelConfig):
    """Feature-space corruption with a detectable trace.

    Returns augment(instance, sigma, rng) -> FeatureInstance. The
    embedding gains iid Gaussian noise of the given scale, and the
    magnitude of that noise is pushed through the generator's own mixing
    pathway into the feature map, so the trained head can learn to
    down-weight corrupted components. Requires the generating config
    because the mixing matrix is reconstructed from its seed.
    """
    mixer = make_mixer(noise_cfg)

    def augment(instance: FeatureInstance, sigma: float, rng: np.random.Generator) -> FeatureInstance:
        emb = instance.embedding[None, :]
        maps = instance.feature_map[None, :]
        new_maps, new_emb = _augment_arrays(maps, emb, sigma, rng, mixer)
        return FeatureInstance(new_maps[0], new_emb[0])

    return augment


def _augment_arrays(maps, emb, sigma: float, rng: np.random.Generator, mixer: Mixer):
    if sigma == 0.0:
        return maps, emb
    eps = sigma * rng.standard_normal(emb.shape)
    delta_lat = mixer.encode_scale_delta(np.abs(eps))
    return maps + mixer.maps_of(eps, delta_lat), emb + eps


def train(dataset, cfg: TrainConfig, mode: str = "cfan"):
    """Run cfg.steps training steps. Returns (head, log).

    Seeding: child 0 of rng_seed initializes the head, child 1 drives
    batch sampling and augmentation, so runs are bit-reproducible.
    """
    if mode not in ("cfan", "instance"):
        raise ValueError(f"training mode must be 'cfan' or 'instance', got {mode!r}")
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(2)
    head = init_head(dataset.map_dim, dataset.dim, mode, np.random.default_rng(seeds[0]))
    opt = OptimizerState.zeros_like(head)
    batch_rng = np.random.default_rng(seeds[1])
    sigma = cfg.augment_sigma()
    mixer = None
    if sigma is not None:
        noise_cfg = getattr(dataset, "config", None)
        if not isinstance(noise_cfg, NoiseModelConfig):
            raise ValueError("noise augmentation requires a dataset with a generator config")
        mixer = make_mixer(noise_cfg)
    log: list[TrainLogEntry] = []
    for step in range(cfg.steps):
        batch = sample_batch(dataset, cfg, batch_rng)
        if mixer is not None:
            batch = [
                BatchTemplate(t.label, *_augment_arrays(t.feature_maps, t.embeddings, sigma, batch_rng, mixer))
                for t in batch
            ]
        loss, active = train_step(batch, head, opt, cfg)
        log.append(TrainLogEntry(step, loss, active))
    return head, log
