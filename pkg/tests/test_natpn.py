"""
Tests for evidence and the pseudo-count posterior update
"""

import math

import numpy as np
import pytest

from src.natpn import (
    CertaintyBudget,
    Evidence,
    PosteriorAccumulator,
    accumulate,
    evidence_batch,
    evidence_from_log_density,
    finalize,
    informative_prior,
    interpolated_mean,
    interpolation_norm,
    merge,
    posterior_update,
    recover_observed_mu,
    scaled_log_density,
)
from src.sphere_core import DomainError, RandomStream, uniform_sphere_batch
from src.vmf import DegeneratePosteriorError, VmfParams


Z = np.array([0.0, 0.0, 1.0])
X = np.array([1.0, 0.0, 0.0])


@pytest.fixture
def prior():
    """Prior on +z with unit concentration."""
    return VmfParams(Z, 1.0)


def test_evidence_validation():
    """Evidence and budget reject invalid values."""
    with pytest.raises(DomainError):
        Evidence(-1.0)
    with pytest.raises(DomainError):
        Evidence(math.nan)
    with pytest.raises(DomainError):
        CertaintyBudget(0.0)


def test_informative_prior():
    """Prior points against the surface normal."""
    p = informative_prior(Z)
    assert np.allclose(p.mu, -Z)
    assert p.kappa == 1.0
    assert informative_prior(X, kappa0=3.0).kappa == 3.0


def test_evidence_from_log_density():
    """m = N_H * p(x), clamped at m_max."""
    budget = CertaintyBudget(10.0)
    assert evidence_from_log_density(0.0, budget).m == pytest.approx(10.0)
    assert evidence_from_log_density(-math.inf, budget).m == 0.0

    ev = evidence_from_log_density(20.0, CertaintyBudget(1e3), m_max=1e6)
    assert ev.clamped
    assert ev.m == 1e6

    with pytest.raises(ValueError):
        evidence_from_log_density(math.nan, budget)
    with pytest.raises(ValueError):
        evidence_from_log_density(math.inf, budget)


def test_evidence_batch_matches_scalar():
    """Vectorized evidence agrees with the scalar path."""
    budget = CertaintyBudget(50.0)
    log_densities = np.array([-math.inf, -3.0, 0.0, 15.0])
    m, clamped = evidence_batch(log_densities, budget, m_max=1e6)
    for value, flag, ld in zip(m, clamped, log_densities):
        ev = evidence_from_log_density(ld, budget, m_max=1e6)
        assert value == pytest.approx(ev.m, rel=1e-12)
        assert bool(flag) == ev.clamped
    with pytest.raises(ValueError):
        evidence_batch(np.array([math.nan]), budget)


def test_scaled_log_density():
    """Density normalization switch."""
    assert scaled_log_density(-8.0, 4, mode='raw') == -8.0
    assert scaled_log_density(-8.0, 4, mode='per_dim') == -2.0
    assert np.allclose(scaled_log_density(np.array([-8.0, 4.0]), 4, mode='per_dim'), [-2.0, 1.0])
    with pytest.raises(ValueError):
        scaled_log_density(-8.0, 4, mode='bogus')


def test_posterior_update_examples(prior):
    """Hand-computed updates."""
    post = posterior_update(prior, X, Evidence(1.0))
    assert np.allclose(post.mu, [1 / math.sqrt(2), 0.0, 1 / math.sqrt(2)], atol=1e-12)
    assert post.kappa == pytest.approx(2.0)

    post = posterior_update(prior, X, Evidence(3.0))
    assert np.allclose(post.mu, np.array([3.0, 0.0, 1.0]) / math.sqrt(10.0), atol=1e-12)
    assert post.kappa == pytest.approx(4.0)


def test_posterior_update_without_evidence(prior):
    """m = 0 returns the prior unchanged."""
    assert posterior_update(prior, X, Evidence(0.0)) is prior


def test_posterior_update_large_evidence(prior):
    """Huge evidence moves the mean onto the observation."""
    post = posterior_update(prior, X, Evidence(1e6))
    assert np.allclose(post.mu, X, atol=1e-5)
    assert post.kappa == pytest.approx(1e6 + 1.0)


def test_posterior_update_aligned_keeps_direction(prior):
    """Aligned observation keeps mu and adds m."""
    post = posterior_update(prior, Z, Evidence(5.0))
    assert np.allclose(post.mu, Z)
    assert post.kappa == pytest.approx(6.0)


def test_posterior_update_degenerate(prior):
    """Opposing equal weights cancel."""
    with pytest.raises(DegeneratePosteriorError):
        posterior_update(prior, -Z, Evidence(1.0))


def test_posterior_update_monotone_concentration(prior):
    """kappa0' = kappa0 + m for arbitrary observations."""
    for mu_c in uniform_sphere_batch(RandomStream(2), 20):
        for m in [0.1, 1.5, 30.0]:
            post = posterior_update(prior, mu_c, Evidence(m))
            assert post.kappa == pytest.approx(prior.kappa + m)
            assert np.linalg.norm(post.mu) == pytest.approx(1.0)


def test_interpolated_mean_norm_bounded(prior):
    """The pre-normalization vector never exceeds unit length."""
    for mu_c in uniform_sphere_batch(RandomStream(3), 50):
        assert np.linalg.norm(interpolated_mean(prior, mu_c, Evidence(2.0))) <= 1.0 + 1e-12


def test_interpolation_norm(prior):
    """Orthogonal mu_c with m = 3: |(z + 3x) / 4| = sqrt(10) / 4."""
    assert interpolation_norm(prior, X, Evidence(3.0)) == pytest.approx(math.sqrt(10.0) / 4.0, rel=1e-14)
    assert interpolation_norm(prior, Z, Evidence(3.0)) == pytest.approx(1.0, rel=1e-14)


def test_recover_observed_mu(prior):
    """The likelihood mean is recovered from the posterior when m > kappa0."""
    rng = RandomStream(11)
    for mu_c in uniform_sphere_batch(rng, 30):
        ev = Evidence(1.0 + 10.0 * float(rng.uniform()) + 1e-3)
        post = posterior_update(prior, mu_c, ev)
        assert np.allclose(recover_observed_mu(post, prior, ev), mu_c, atol=1e-9)


def test_recover_observed_mu_ambiguous(prior):
    """With m <= kappa0 two observations share a posterior."""
    post = posterior_update(prior, X, Evidence(0.5))
    with pytest.raises(DomainError):
        recover_observed_mu(post, prior, Evidence(0.5))


def test_accumulator_merge_order_free(prior):
    """Merging partial accumulators in any split gives the same posterior."""
    rng = RandomStream(4)
    mus = uniform_sphere_batch(rng, 12)
    ms = rng.uniform(12) * 5.0

    full = PosteriorAccumulator.from_prior(prior)
    for mu_c, m in zip(mus, ms):
        full = accumulate(full, mu_c, Evidence(m))

    left = PosteriorAccumulator.from_prior(prior)
    right = PosteriorAccumulator()
    for mu_c, m in zip(mus[:5], ms[:5]):
        left = accumulate(left, mu_c, Evidence(m))
    for mu_c, m in zip(mus[5:], ms[5:]):
        right = accumulate(right, mu_c, Evidence(m))

    a = finalize(full)
    b = finalize(merge(right, left))
    assert np.allclose(a.mu, b.mu, atol=1e-12)
    assert a.kappa == pytest.approx(b.kappa, rel=1e-12)
    assert a.kappa == pytest.approx(prior.kappa + ms.sum(), rel=1e-12)


def test_accumulator_single_matches_update(prior):
    """One accumulated observation equals posterior_update."""
    acc = accumulate(PosteriorAccumulator.from_prior(prior), X, Evidence(3.0))
    post = finalize(acc)
    expected = posterior_update(prior, X, Evidence(3.0))
    assert np.allclose(post.mu, expected.mu, atol=1e-12)
    assert post.kappa == pytest.approx(expected.kappa)


def test_finalize_empty_raises():
    """An empty accumulator has no posterior."""
    with pytest.raises(DegeneratePosteriorError):
        finalize(PosteriorAccumulator())
