import json

import numpy as np
import pytest

from emcausal.dataset import TimeSeriesDataset
from emcausal.kernelmap import (
    IdentityMap,
    KernelFeatureMap,
    build_feature_map,
    embed,
    median_bandwidth,
    rbf_kernel,
    sensitivity,
)


def _pairs(n=1000, D=5, seed=123):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, D)), rng.normal(size=(n, D))


def _kernel_mae(p, sigma=3.0, map_seed=7):
    x, y = _pairs()
    fmap = build_feature_map(x.shape[1], p, sigma, map_seed)
    approx = np.sum(embed(fmap, x) * embed(fmap, y), axis=1)
    return np.mean(np.abs(approx - rbf_kernel(x, y, sigma)))


def test_shapes_single_feature():
    fmap = build_feature_map(1, 1, 1.0, 0)
    assert fmap.frequencies.shape == (1, 1)
    assert fmap.offsets.shape == (1,)
    assert embed(fmap, np.array([0.3])).shape == (1,)


def test_deterministic_per_seed():
    a, b = build_feature_map(4, 30, 2.0, 11), build_feature_map(4, 30, 2.0, 11)
    assert np.array_equal(a.frequencies, b.frequencies)
    assert np.array_equal(a.offsets, b.offsets)
    assert not np.array_equal(a.frequencies, build_feature_map(4, 30, 2.0, 12).frequencies)


def test_frequency_std_matches_bandwidth():
    sigma = 2.5
    fmap = build_feature_map(1, 10_000, sigma, 3)
    assert abs(fmap.frequencies.std() - 1 / sigma) < 0.05 / sigma
    assert np.all((fmap.offsets >= 0) & (fmap.offsets < 2 * np.pi))


@pytest.mark.parametrize("p,sigma,D", [(0, 1.0, 2), (5, 0.0, 2), (5, -1.0, 2)])
def test_invalid_construction(p, sigma, D):
    with pytest.raises(ValueError):
        build_feature_map(D, p, sigma, 0)


def test_features_bounded():
    fmap = build_feature_map(3, 50, 0.5, 1)
    z = embed(fmap, np.random.default_rng(0).normal(scale=100, size=(200, 3)))
    assert np.all(np.abs(z) <= np.sqrt(2 / 50) + 1e-15)


def test_embed_zero_with_zero_offsets():
    p = 16
    fmap = KernelFeatureMap(np.ones((p, 2)), np.zeros(p), 1.0)
    np.testing.assert_allclose(embed(fmap, np.zeros(2)), np.full(p, np.sqrt(2 / p)))


def test_embed_dimension_mismatch():
    with pytest.raises(ValueError):
        embed(build_feature_map(3, 5, 1.0, 0), np.zeros(4))


def test_self_kernel_near_one():
    fmap = build_feature_map(5, 500, 1.5, 2)
    x = np.random.default_rng(4).normal(size=(100, 5))
    z = embed(fmap, x)
    self_k = np.sum(z * z, axis=1)
    assert abs(np.mean(self_k) - 1.0) < 0.05
    # z.z - 1 averages p cosines with std sqrt(1 / (2p)) ~ 0.032; allow ~5 std per point
    assert np.all(np.abs(self_k - 1.0) < 0.16)


def test_kernel_approximation_mae_at_500():
    assert _kernel_mae(500) < 0.05


def test_kernel_approximation_improves_with_p():
    maes = [_kernel_mae(p) for p in (200, 500, 1000, 2000)]
    assert all(a > b for a, b in zip(maes, maes[1:])), maes


def test_embed_gradient_matches_finite_differences():
    fmap = build_feature_map(3, 40, 1.3, 5)
    x = np.array([0.2, -0.7, 1.1])
    analytic = -np.sqrt(2 / 40) * np.sin(fmap.frequencies @ x + fmap.offsets)[:, None] * fmap.frequencies
    h = 1e-6
    numeric = np.stack(
        [(embed(fmap, x + h * e) - embed(fmap, x - h * e)) / (2 * h) for e in np.eye(3)], axis=1
    )
    rel = np.linalg.norm(numeric - analytic) / np.linalg.norm(analytic)
    assert rel < 1e-6
    # Lipschitz bound per feature: |grad z_k| <= sqrt(2/p) |w_k|
    bound = np.sqrt(2 / 40) * np.linalg.norm(fmap.frequencies, axis=1)
    assert np.all(np.linalg.norm(analytic, axis=1) <= bound + 1e-12)


def test_sensitivity_rows_sum_to_one():
    for seed in range(20):
        phi = sensitivity(build_feature_map(6, 25, 0.7, seed))
        assert np.all(phi >= 0)
        np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-12)


def test_sensitivity_single_input_and_single_nonzero():
    assert np.array_equal(sensitivity(build_feature_map(1, 7, 1.0, 0)), np.ones((7, 1)))
    sigma = 2.0
    fmap = KernelFeatureMap(np.array([[3.0, 0.0, 0.0], [0.0, 0.0, 0.0]]) / sigma, np.zeros(2), sigma)
    phi = sensitivity(fmap)
    np.testing.assert_allclose(phi[0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(phi[1], [1 / 3] * 3)


def test_identity_map():
    m = IdentityMap(3)
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(embed(m, x), x)
    assert np.array_equal(sensitivity(m), np.eye(3))


def test_serialization_round_trip():
    fmap = build_feature_map(2, 9, 1.7, 4)
    back = KernelFeatureMap.from_dict(json.loads(fmap.to_json()))
    x = np.array([0.5, -1.0])
    assert np.array_equal(embed(back, x), embed(fmap, x))
    assert back.bandwidth == fmap.bandwidth and back.seed == 4


def test_median_bandwidth_two_rows():
    assert median_bandwidth(np.array([[0.0, 0.0], [2.0, 0.0]])) == pytest.approx(2.0)


def test_median_bandwidth_constant_falls_back(caplog):
    ds = TimeSeriesDataset(np.ones((10, 3)), np.ones((10, 3), bool))
    assert median_bandwidth(ds) == 1.0
    assert "identical" in caplog.text


def test_median_bandwidth_gaussian_rows():
    x = np.random.default_rng(9).normal(size=(1000, 10))
    assert abs(median_bandwidth(x) - np.sqrt(20)) < 0.1 * np.sqrt(20)


def test_median_bandwidth_needs_two_rows():
    with pytest.raises(ValueError):
        median_bandwidth(np.zeros((1, 3)))
