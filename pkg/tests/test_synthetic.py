import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfan.synthetic import (
    NoiseModelConfig,
    dataset_residual_correlation,
    generate,
    intra_class_correlation,
    make_mixer,
    oracle_pool,
    oracle_weights,
)
from gradcheck import rel_error


def small_cfg(**kw):
    base = dict(n_subjects=8, dim=6, map_dim=10, instances_per_subject=5, seed=42)
    base.update(kw)
    return NoiseModelConfig(**base)


# ----------------------------------------------------------------- config

def test_config_latent_dim_defaults_to_dim():
    cfg = small_cfg()
    assert cfg.quality_latent_dim == 6


def test_config_validation():
    with pytest.raises(ValueError):
        small_cfg(sigma_min=2.0, sigma_max=1.0)
    with pytest.raises(ValueError):
        small_cfg(sigma_min=-0.1)
    with pytest.raises(ValueError):
        small_cfg(quality_latent_dim=11)  # > map_dim
    with pytest.raises(ValueError):
        small_cfg(instances_per_subject=0)
    with pytest.raises(ValueError):
        small_cfg(n_subjects=-1)
    with pytest.raises(ValueError):
        small_cfg(dim=0)


# -------------------------------------------------------------- generator

def test_generate_is_deterministic():
    a = generate(small_cfg())
    b = generate(small_cfg())
    assert len(a.subjects) == len(b.subjects) == 8
    for sa, sb in zip(a.subjects, b.subjects):
        assert sa.subject_id == sb.subject_id
        assert np.array_equal(sa.mean, sb.mean)
        assert np.array_equal(sa.embeddings, sb.embeddings)
        assert np.array_equal(sa.feature_maps, sb.feature_maps)
        assert np.array_equal(sa.noise_scales, sb.noise_scales)


def test_generate_seed_changes_data():
    a = generate(small_cfg())
    b = generate(small_cfg(seed=43))
    assert not np.array_equal(a.subjects[0].embeddings, b.subjects[0].embeddings)


def test_generate_zero_noise_reproduces_means():
    ds = generate(small_cfg(sigma_min=0.0, sigma_max=0.0))
    for s in ds.subjects:
        assert np.array_equal(s.embeddings, np.tile(s.mean, (5, 1)))
        assert not s.noise_scales.any()
        assert np.isfinite(s.feature_maps).all()


def test_generate_shapes_and_ids():
    ds = generate(small_cfg())
    assert ds.dim == 6 and ds.map_dim == 10
    s = ds.subjects[3]
    assert s.subject_id == "s00003"
    assert s.feature_maps.shape == (5, 10)
    assert s.embeddings.shape == (5, 6)
    assert s.noise_scales.shape == (5, 6)
    assert np.all(s.noise_scales >= 0.1) and np.all(s.noise_scales <= 2.0)


def test_generate_noise_variance_matches_scales():
    # per component, the sample variance of 1e4 instances tracks mean(sigma^2)
    cfg = NoiseModelConfig(n_subjects=1, dim=8, map_dim=12,
                           instances_per_subject=10_000,
                           sigma_min=0.5, sigma_max=1.5, seed=7)
    s = generate(cfg).subjects[0]
    got = s.embeddings.var(axis=0)
    expect = (s.noise_scales**2).mean(axis=0)
    assert np.max(np.abs(got / expect - 1.0)) < 0.05


def test_subject_template_view():
    ds = generate(small_cfg())
    t = ds.subjects[0].template([0, 2])
    assert len(t.instances) == 2
    assert np.array_equal(t.instances[1].embedding, ds.subjects[0].embeddings[2])


# ------------------------------------------------------------------ mixer

def test_mixer_depends_only_on_seed_and_dimensions():
    # same seed, different population sizes: identical mixing matrices,
    # which is what lets train/eval splits share one feature space
    a = make_mixer(small_cfg(n_subjects=8))
    b = make_mixer(small_cfg(n_subjects=9999, instances_per_subject=2))
    assert np.array_equal(a.matrix, b.matrix)
    c = make_mixer(small_cfg(seed=43))
    assert not np.array_equal(a.matrix, c.matrix)


def test_mixer_zscores_the_scale_latents():
    cfg = small_cfg(sigma_min=0.5, sigma_max=1.5)
    mx = make_mixer(cfg)
    assert mx.projector is None  # q == dim needs no projection
    scales = np.array([[1.0] * 6])
    z = mx.encode_scales(scales)
    # analytic mean 1.0, std 1/sqrt(12)
    assert np.allclose(z, 0.0, atol=1e-12)
    z2 = mx.encode_scales(np.array([[1.5] * 6]))
    assert np.allclose(z2, 0.5 / (1.0 / np.sqrt(12.0)), atol=1e-12)


def test_mixer_degenerate_scale_law():
    mx = make_mixer(small_cfg(sigma_min=1.0, sigma_max=1.0))
    z = mx.encode_scales(np.array([[1.0] * 6]))
    assert np.array_equal(z, np.zeros((1, 6)))


def test_mixer_projected_latents():
    cfg = small_cfg(quality_latent_dim=3)
    mx = make_mixer(cfg)
    assert mx.projector is not None and mx.projector.shape == (3, 6)
    z = mx.encode_scales(np.random.default_rng(0).uniform(0.1, 2.0, (4, 6)))
    assert z.shape == (4, 3)
    assert mx.matrix.shape == (10, 6 + 3)


def test_mixer_zero_latent_dim():
    cfg = small_cfg(quality_latent_dim=0)
    mx = make_mixer(cfg)
    emb = np.random.default_rng(1).normal(size=(3, 6))
    lat = mx.encode_scales(np.random.default_rng(2).uniform(0.1, 2.0, (3, 6)))
    assert lat.shape == (3, 0)
    assert np.array_equal(mx.maps_of(emb, lat), emb @ mx.matrix.T)


def test_generate_maps_come_from_the_mixer():
    cfg = small_cfg()
    ds = generate(cfg)
    mx = make_mixer(cfg)
    s = ds.subjects[0]
    expect = mx.maps_of(s.embeddings, mx.encode_scales(s.noise_scales))
    assert np.array_equal(s.feature_maps, expect)


# ----------------------------------------------------------------- oracle

def test_oracle_weights_uniform():
    w = oracle_weights(np.full((4, 3), 0.7))
    assert rel_error(w, np.full((4, 3), 0.25)) < 1e-12


def test_oracle_weights_inverse_variance():
    # variances (1, 3) -> weights (0.75, 0.25)
    w = oracle_weights([[1.0], [np.sqrt(3.0)]])
    assert rel_error(w, [[0.75], [0.25]]) < 1e-12


def test_oracle_weights_exact_observation():
    w = oracle_weights([[0.0], [2.0]])
    assert np.array_equal(w, [[1.0], [0.0]])
    w2 = oracle_weights([[0.0], [0.0], [5.0]])
    assert np.array_equal(w2, [[0.5], [0.5], [0.0]])


def test_oracle_weights_empty_errors():
    with pytest.raises(ValueError, match="empty set"):
        oracle_weights(np.empty((0, 2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 6))
def test_oracle_weights_columns_are_convex(seed, n, d):
    rng = np.random.default_rng(seed)
    sig = rng.uniform(0.05, 3.0, (n, d))
    if rng.random() < 0.3:
        sig[rng.integers(n), rng.integers(d)] = 0.0
    w = oracle_weights(sig)
    assert np.all(w >= 0)
    assert np.max(np.abs(w.sum(axis=0) - 1.0)) < 1e-12


def test_oracle_pool_uniform_scales_is_average():
    rng = np.random.default_rng(20)
    F = rng.normal(size=(5, 4))
    r = oracle_pool(F, np.full((5, 4), 1.3))
    assert rel_error(r, F.mean(axis=0)) < 1e-12


def test_oracle_pool_single_instance_identity():
    F = np.array([[3.0, -1.0]])
    assert np.array_equal(oracle_pool(F, [[0.5, 2.0]]), F[0])


def test_oracle_pool_shape_mismatch():
    with pytest.raises(ValueError):
        oracle_pool(np.zeros((2, 3)), np.ones((3, 2)))


def test_oracle_pool_beats_average_on_heterogeneous_noise():
    rng = np.random.default_rng(21)
    n_templates, n, d = 2000, 5, 8
    worse = 0
    mse_o = np.empty(n_templates)
    mse_a = np.empty(n_templates)
    for i in range(n_templates):
        mu = rng.standard_normal(d)
        sig = rng.uniform(0.1, 2.0, (n, d))
        F = mu + sig * rng.standard_normal((n, d))
        ro = oracle_pool(F, sig)
        ra = F.mean(axis=0)
        mse_o[i] = ((ro - mu) ** 2).sum()
        mse_a[i] = ((ra - mu) ** 2).sum()
    assert mse_o.mean() < mse_a.mean()
    assert (mse_a - mse_o).mean() > 0.05 * mse_a.mean()


# ------------------------------------------------------------ correlation

def test_correlation_single_component():
    groups = [np.random.default_rng(0).normal(size=(10, 1))]
    assert np.array_equal(intra_class_correlation(groups), [[1.0]])


def test_correlation_independent_components_near_zero():
    rng = np.random.default_rng(22)
    groups = [rng.normal(size=(100, 6)) for _ in range(100)]
    corr = intra_class_correlation(groups)
    off = corr[~np.eye(6, dtype=bool)]
    assert np.max(off) < 0.05


def test_correlation_duplicated_component():
    rng = np.random.default_rng(23)
    g = rng.normal(size=(200, 3))
    g[:, 1] = g[:, 0]
    corr = intra_class_correlation([g])
    assert corr[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_correlation_zero_variance_convention():
    g = np.random.default_rng(24).normal(size=(50, 3))
    g[:, 2] = 4.0  # constant within the group: zero residual variance
    corr = intra_class_correlation([g])
    assert corr[2, 2] == 1.0
    assert corr[0, 2] == 0.0 and corr[2, 0] == 0.0


def test_correlation_centers_each_group():
    # two groups with wildly different means but identical residuals must
    # not manufacture correlation from the mean offsets
    rng = np.random.default_rng(25)
    resid = rng.normal(size=(300, 4))
    corr = intra_class_correlation([resid + 100.0, resid[::-1] - 50.0])
    off = corr[~np.eye(4, dtype=bool)]
    assert np.max(off) < 0.2


def test_correlation_properties():
    rng = np.random.default_rng(26)
    corr = intra_class_correlation([rng.normal(size=(30, 5)) for _ in range(4)])
    assert corr.shape == (5, 5)
    assert np.array_equal(corr, corr.T)
    assert np.array_equal(np.diag(corr), np.ones(5))
    assert np.all(corr >= 0) and np.all(corr <= 1 + 1e-12)


def test_correlation_needs_multi_instance_group():
    with pytest.raises(ValueError):
        intra_class_correlation([np.zeros((1, 3)), np.zeros((1, 3))])


def test_dataset_residual_correlation_runs():
    ds = generate(small_cfg(n_subjects=30, instances_per_subject=20))
    corr = dataset_residual_correlation(ds)
    assert corr.shape == (6, 6)
    assert np.array_equal(np.diag(corr), np.ones(6))
