"""Synthetic heteroscedastic data with analytic oracles.

Each subject has a true mean vector; every observed embedding is the
mean plus zero-mean Gaussian noise whose scale varies independently per
component and per instance. Because the noise scales are known, the
minimum-variance linear pooling (inverse-variance weights) is available
in closed form and serves as the ceiling that learned aggregation is
measured against.

The quality head never sees the noise scales directly. Each instance's
feature map is a fixed seeded random linear mix of its embedding
concatenated with scale-derived latent channels, so the realized noise
level is linearly decodable from the map but not written in any single
coordinate. The latent channels are z-scored with the analytic mean/std
of the uniform scale law before mixing; without that the embedding block
carries roughly eight times the per-channel variance and drowns out the
quality signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import core
from .aggregation import FeatureInstance, Template


@dataclass
class NoiseModelConfig:
    n_subjects: int = 100
    dim: int = 64
    map_dim: int = 128
    instances_per_subject: int = 21
    sigma_min: float = 0.1
    sigma_max: float = 2.0
    quality_latent_dim: int | None = None  # defaults to dim
    seed: int = 0

    def __post_init__(self):
        if self.quality_latent_dim is None:
            self.quality_latent_dim = self.dim
        if self.n_subjects < 0 or self.dim < 1 or self.map_dim < 1:
            raise ValueError("invalid dataset dimensions")
        if self.instances_per_subject < 1:
            raise ValueError("instances_per_subject must be >= 1")
        if not (self.sigma_min >= 0 and self.sigma_max >= self.sigma_min):
            raise ValueError("need 0 <= sigma_min <= sigma_max")
        if not 0 <= self.quality_latent_dim <= self.map_dim:
            raise ValueError("quality_latent_dim must lie in [0, map_dim]")


@dataclass
class Mixer:
    """The fixed random linear map from (embedding, latents) to feature maps."""

    matrix: np.ndarray  # (M, dim + q)
    projector: np.ndarray | None  # (q, dim) when q not in (0, dim)
    scale_mean: float
    scale_std: float

    def encode_scales(self, scales: np.ndarray) -> np.ndarray:
        """Latent channels for the given per-component noise scales (N x q)."""
        if self.scale_std > 0:
            z = (scales - self.scale_mean) / self.scale_std
        else:
            z = np.zeros_like(scales)
        if self.projector is not None:
            return z @ self.projector.T
        # without a projector the latent dim is 0 or the full dim
        q = self.matrix.shape[1] - scales.shape[1]
        return z[:, :q]

    def encode_scale_delta(self, magnitudes: np.ndarray) -> np.ndarray:
        """Latent increment for additional noise of the given magnitude.

        Used by training-time augmentation: same scaling as encode_scales
        but without the mean shift, since this is a delta on top of an
        already-encoded instance.
        """
        z = magnitudes / self.scale_std if self.scale_std > 0 else magnitudes
        if self.projector is not None:
            return z @ self.projector.T
        q = self.matrix.shape[1] - magnitudes.shape[1]
        return z[:, :q]

    def maps_of(self, embeddings: np.ndarray, latents: np.ndarray) -> np.ndarray:
        return np.concatenate([embeddings, latents], axis=1) @ self.matrix.T


def make_mixer(cfg: NoiseModelConfig) -> Mixer:
    """Mixer is a pure function of the config seed and dimensions.

    Child 1 of the config's seed sequence drives the mixer, child 0 the
    data stream, so datasets that must share a mixer (train/eval splits)
    simply share a config seed.
    """
    q = cfg.quality_latent_dim
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    matrix = rng.standard_normal((cfg.map_dim, cfg.dim + q)) / np.sqrt(cfg.dim + q)
    projector = None
    if q not in (0, cfg.dim):
        projector = rng.standard_normal((q, cfg.dim)) / np.sqrt(cfg.dim)
    mean = 0.5 * (cfg.sigma_min + cfg.sigma_max)
    std = (cfg.sigma_max - cfg.sigma_min) / np.sqrt(12.0)
    return Mixer(matrix, projector, mean, std)


@dataclass
class SubjectData:
    subject_id: str
    mean: np.ndarray  # (D,)
    feature_maps: np.ndarray  # (N, M)
    embeddings: np.ndarray  # (N, D)
    noise_scales: np.ndarray  # (N, D)

    def instance(self, i: int) -> FeatureInstance:
        return FeatureInstance(self.feature_maps[i], self.embeddings[i])

    def template(self, indices) -> Template:
        return Template(self.subject_id, [self.instance(i) for i in indices])


@dataclass
class SyntheticDataset:
    config: NoiseModelConfig
    subjects: list[SubjectData] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def map_dim(self) -> int:
        return self.config.map_dim


def generate(cfg: NoiseModelConfig) -> SyntheticDataset:
    """Draw a dataset: means iid standard normal, per-instance noise with
    scales uniform on [sigma_min, sigma_max] iid per component."""
    mixer = make_mixer(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[0])
    n, d = cfg.instances_per_subject, cfg.dim
    subjects = []
    for k in range(cfg.n_subjects):
        mu = rng.standard_normal(d)
        scales = rng.uniform(cfg.sigma_min, cfg.sigma_max, (n, d))
        eps = rng.standard_normal((n, d)) * scales
        emb = mu + eps
        maps = mixer.maps_of(emb, mixer.encode_scales(scales))
        subjects.append(SubjectData(f"s{k:05d}", mu, maps, emb, scales))
    return SyntheticDataset(cfg, subjects)


def oracle_weights(noise_scales) -> np.ndarray:
    """Inverse-variance pooling weights, one column per component.

    w_ij = (1/sigma_ij^2) / sum_k (1/sigma_kj^2). A zero scale means the
    component was observed exactly, so it takes all the weight (split
    uniformly if several instances are exact).
    """
    sig = core.as_matrix(noise_scales)
    if sig.shape[0] == 0:
        raise ValueError("empty set")
    zero = sig == 0.0
    with np.errstate(divide="ignore"):
        inv = 1.0 / (sig * sig)
    w = np.empty_like(sig)
    has_zero = zero.any(axis=0)
    if (~has_zero).any():
        cols = inv[:, ~has_zero]
        w[:, ~has_zero] = cols / cols.sum(axis=0)
    if has_zero.any():
        cols = zero[:, has_zero].astype(np.float64)
        w[:, has_zero] = cols / cols.sum(axis=0)
    return w


def oracle_pool(embeddings, noise_scales) -> np.ndarray:
    """Minimum-variance unbiased linear fusion given the true noise scales."""
    F = core.as_matrix(embeddings)
    w = oracle_weights(noise_scales)
    if w.shape != F.shape:
        raise ValueError("noise scales must match embeddings shape")
    return (w * F).sum(axis=0)


def intra_class_correlation(groups) -> np.ndarray:
    """Absolute Pearson correlation of within-subject residual components.

    groups: iterable of (N_k x D) arrays, one per subject. Each group is
    centered on its own mean; residuals are pooled and correlated across
    components. Components with zero residual variance get off-diagonal
    entries 0 by convention; the diagonal is 1.
    """
    centered = []
    for g in groups:
        g = core.as_matrix(g)
        if g.shape[0] >= 1:
            centered.append(g - g.mean(axis=0))
    if not centered or max(c.shape[0] for c in centered) < 2:
        raise ValueError("need at least two instances for some subject")
    R = np.vstack(centered)
    cov = (R.T @ R) / R.shape[0]
    std = np.sqrt(np.diag(cov))
    denom = np.outer(std, std)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.abs(cov / denom)
    corr[denom == 0.0] = 0.0
    np.fill_diagonal(corr, 1.0)
    return corr


def dataset_residual_correlation(ds: SyntheticDataset) -> np.ndarray:
    return intra_class_correlation(s.embeddings for s in ds.subjects)
