"""
Tests for the Gaussian-mixture evidence density
"""

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.stats import norm

from src.evidence_gmm import (
    GmmModel,
    fit_em,
    load_model,
    log_density,
    log_density_batch,
    model_from_dict,
    model_to_dict,
    responsibilities,
    save_model,
)
from src.sphere_core import RandomStream


@pytest.fixture
def two_clusters():
    """Two well-separated 2-D Gaussian blobs."""
    rng = RandomStream(0)
    a = rng.normal((300, 2)) * 0.5 + np.array([-5.0, 0.0])
    b = rng.normal((300, 2)) * 0.5 + np.array([5.0, 2.0])
    return np.vstack([a, b])


def test_model_validation():
    """Shapes, simplex weights and variance floor are enforced."""
    with pytest.raises(ValueError):
        GmmModel([0.5, 0.4], [[0.0], [1.0]], [[1.0], [1.0]])
    with pytest.raises(ValueError):
        GmmModel([1.0], [[0.0, 0.0]], [[1.0]])
    with pytest.raises(ValueError):
        GmmModel([1.0], [[0.0]], [[1e-9]])
    model = GmmModel([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
    assert model.k == 1
    assert model.dim == 2


def test_single_gaussian_density():
    """One component equals the product of normal densities."""
    model = GmmModel([1.0], [[1.0, -2.0]], [[4.0, 0.25]])
    z = np.array([0.5, -1.5])
    expected = norm.logpdf(0.5, 1.0, 2.0) + norm.logpdf(-1.5, -2.0, 0.5)
    assert log_density(model, z) == pytest.approx(expected, rel=1e-12)


def test_density_integrates_to_one():
    """1-D mixture density integrates to one."""
    model = GmmModel([0.3, 0.7], [[-2.0], [3.0]], [[0.5], [2.0]])
    grid = np.linspace(-15.0, 20.0, 20_001)
    density = np.exp(log_density_batch(model, grid[:, None]))
    assert trapezoid(density, grid) == pytest.approx(1.0, abs=1e-6)


def test_batch_matches_single(two_clusters):
    """Batch and single evaluation agree."""
    model = fit_em(two_clusters, k=2, rng=RandomStream(1))
    batch = log_density_batch(model, two_clusters[:5])
    for z, value in zip(two_clusters[:5], batch):
        assert log_density(model, z) == pytest.approx(value, rel=1e-12)


def test_dimension_mismatch():
    """Wrong feature dimension raises."""
    model = GmmModel([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
    with pytest.raises(ValueError):
        log_density(model, np.zeros(3))
    with pytest.raises(ValueError):
        log_density(model, np.zeros((2, 2)))


def test_fit_recovers_clusters(two_clusters):
    """EM finds both blob centers."""
    model = fit_em(two_clusters, k=2, rng=RandomStream(3))
    centers = sorted(model.means.tolist())
    assert np.allclose(centers[0], [-5.0, 0.0], atol=0.15)
    assert np.allclose(centers[1], [5.0, 2.0], atol=0.15)
    assert np.allclose(sorted(model.weights), [0.5, 0.5], atol=0.02)
    assert np.allclose(model.variances, 0.25, atol=0.08)


def test_fit_log_likelihood_non_decreasing(two_clusters):
    """EM never lowers the mean log-likelihood."""
    model = fit_em(two_clusters, k=5, rng=RandomStream(4))
    trace = np.array(model.log_likelihood_trace)
    assert len(trace) >= 2
    assert np.all(np.diff(trace) >= -1e-9)


def test_fit_is_deterministic(two_clusters):
    """Same seed, same model."""
    a = fit_em(two_clusters, k=3, rng=RandomStream(7))
    b = fit_em(two_clusters, k=3, rng=RandomStream(7))
    assert np.array_equal(a.means, b.means)
    assert np.array_equal(a.weights, b.weights)


def test_fit_input_validation():
    """Too few samples, bad k and non-finite data raise."""
    with pytest.raises(ValueError):
        fit_em(np.zeros((3, 2)), k=5)
    with pytest.raises(ValueError):
        fit_em(np.zeros((3, 2)), k=0)
    with pytest.raises(ValueError):
        fit_em(np.array([[0.0, math.nan], [1.0, 1.0]]), k=1)


def test_fit_handles_duplicate_points():
    """Identical points keep variances at the floor."""
    data = np.vstack([np.zeros((20, 2)), np.ones((20, 2))])
    model = fit_em(data, k=2, rng=RandomStream(5))
    assert np.all(model.variances >= 1e-6)
    assert np.all(np.isfinite(log_density_batch(model, data)))


def test_responsibilities_rows_sum_to_one(two_clusters):
    """Component posteriors form a distribution per point."""
    model = fit_em(two_clusters, k=4, rng=RandomStream(6))
    resp = responsibilities(model, two_clusters)
    assert resp.shape == (len(two_clusters), 4)
    assert np.allclose(resp.sum(axis=1), 1.0)


def test_far_points_have_lower_density(two_clusters):
    """Density falls off away from the data."""
    model = fit_em(two_clusters, k=2, rng=RandomStream(8))
    assert log_density(model, np.array([-5.0, 0.0])) > log_density(model, np.array([30.0, 30.0]))


def test_save_and_load(tmp_path, two_clusters):
    """Model documents survive a file round trip."""
    model = fit_em(two_clusters, k=2, rng=RandomStream(9))
    path = tmp_path / 'gmm.json'
    save_model(model, str(path))
    loaded = load_model(str(path))
    assert np.allclose(loaded.means, model.means)
    assert np.allclose(
        log_density_batch(loaded, two_clusters[:10]),
        log_density_batch(model, two_clusters[:10]),
    )


def test_model_from_dict_header_mismatch():
    """Header fields must match the arrays."""
    doc = model_to_dict(GmmModel([1.0], [[0.0]], [[1.0]]))
    doc['k'] = 2
    with pytest.raises(ValueError):
        model_from_dict(doc)


def test_trace_ends_with_returned_model(two_clusters):
    """Stopping at max_iters still records the final model's log-likelihood."""
    model = fit_em(two_clusters, k=2, max_iters=3, tol=-math.inf, rng=RandomStream(2))
    assert len(model.log_likelihood_trace) == 4
    expected = float(np.mean(log_density_batch(model, two_clusters)))
    assert model.log_likelihood_trace[-1] == pytest.approx(expected, rel=1e-10)


def test_model_from_dict_missing_field():
    """Missing arrays raise ValueError, not KeyError."""
    with pytest.raises(ValueError):
        model_from_dict({'weights': [1.0]})
