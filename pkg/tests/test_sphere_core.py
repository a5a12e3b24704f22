"""
Tests for sphere primitives and special functions
"""

import math

import numpy as np
import pytest

from src.sphere_core import (
    DomainError,
    RandomStream,
    a3,
    a3_prime,
    align_rotation,
    as_unit_vector,
    is_rotation,
    log_norm_const,
    log_sinh,
    normalize,
    rotate_about_axis,
    uniform_sphere,
    uniform_sphere_batch,
)


@pytest.fixture
def rng():
    """Fixed random stream."""
    return RandomStream(42)


def test_log_sinh_values():
    """Test log_sinh against direct evaluation and the asymptote."""
    assert log_sinh(1.0) == pytest.approx(math.log(math.sinh(1.0)), rel=1e-12)
    assert log_sinh(1.0) == pytest.approx(0.161439, abs=1e-6)
    assert log_sinh(1000.0) == pytest.approx(1000.0 - math.log(2.0), rel=1e-15)
    assert log_sinh(1e6) == pytest.approx(1e6 - math.log(2.0), rel=1e-15)


def test_log_sinh_small_argument():
    """log_sinh(k) - log(k) tends to zero."""
    for k in [1e-5, 1e-8, 1e-12]:
        assert log_sinh(k) - math.log(k) == pytest.approx(0.0, abs=1e-9)
    assert log_sinh(0.0) == -math.inf


def test_log_sinh_branch_agreement():
    """Series, direct and asymptotic branches agree at the switch-over points."""
    for k in [1e-4, 20.0]:
        lo, hi = np.nextafter(k, 0.0), np.nextafter(k, np.inf)
        assert log_sinh(lo) == pytest.approx(log_sinh(hi), rel=1e-12)


def test_log_norm_const_values():
    """Test log Z against closed forms."""
    assert log_norm_const(0.0) == pytest.approx(-math.log(4 * math.pi), abs=1e-15)
    assert log_norm_const(0.0) == pytest.approx(-2.531024, abs=1e-6)
    assert log_norm_const(1.0) == pytest.approx(-2.692463, abs=1e-6)

    # log(1000) - log(4 pi) - (1000 - log 2)
    expected = math.log(1000.0) - math.log(4 * math.pi) - 1000.0 + math.log(2.0)
    assert log_norm_const(1000.0) == pytest.approx(expected, abs=1e-9)
    assert log_norm_const(1000.0) == pytest.approx(-994.930122, abs=1e-6)


def test_a3_values():
    """Test a3 = coth(k) - 1/k."""
    assert a3(2.0) == pytest.approx(1.0 / math.tanh(2.0) - 0.5, rel=1e-14)
    assert a3(2.0) == pytest.approx(0.537315, abs=1e-6)
    assert a3(1e-4) == pytest.approx(1e-4 / 3.0 - 1e-12 / 45.0, rel=1e-12)
    assert a3(1e-4) == pytest.approx(1e-4 / 3.0, rel=1e-9)
    assert a3(1e6) == pytest.approx(1.0 - 1e-6, rel=1e-12)
    assert a3(0.0) == 0.0


def test_negative_arguments_rejected():
    """Test domain errors for negative or NaN arguments."""
    for fn in (log_sinh, log_norm_const, a3, a3_prime):
        with pytest.raises(DomainError):
            fn(-1.0)
        with pytest.raises(DomainError):
            fn(float('nan'))


def test_vectorized_evaluation():
    """Array input evaluates element-wise; scalar input returns a float."""
    ks = np.array([0.0, 1e-5, 1.0, 50.0])
    out = a3(ks)
    assert isinstance(out, np.ndarray)
    assert out.shape == ks.shape
    assert isinstance(a3(1.0), float)
    assert out[2] == pytest.approx(a3(1.0))


def test_finite_and_monotone_on_log_grid():
    """log Z and a3 are finite on [1e-8, 1e6]; a3 is non-decreasing."""
    ks = np.logspace(-8, 6, 10_000)
    log_z = log_norm_const(ks)
    values = a3(ks)

    assert np.all(np.isfinite(log_z))
    assert np.all(np.isfinite(values))
    assert np.all(np.diff(values) >= 0.0)
    assert np.all((values >= 0.0) & (values < 1.0))


def test_log_norm_const_derivative_is_minus_a3():
    """Central differences of log Z match -a3."""
    for k in np.logspace(-1, 3, 200):
        h = 1e-5 * k
        fd = (log_norm_const(k + h) - log_norm_const(k - h)) / (2 * h)
        assert fd == pytest.approx(-a3(k), rel=1e-6)


def test_a3_prime_matches_finite_difference():
    """a3_prime matches central differences across the series boundary."""
    for k in [0.01, 0.049, 0.051, 0.5, 2.0, 30.0]:
        h = 1e-6
        fd = (a3(k + h) - a3(k - h)) / (2 * h)
        assert a3_prime(k) == pytest.approx(fd, rel=1e-6, abs=1e-9)
    assert a3_prime(0.0) == pytest.approx(1.0 / 3.0)


def test_unit_vector_helpers():
    """Test normalization and validation."""
    assert np.allclose(normalize([3.0, 0.0, 4.0]), [0.6, 0.0, 0.8])
    with pytest.raises(DomainError):
        normalize([0.0, 0.0, 0.0])
    with pytest.raises(DomainError):
        as_unit_vector([1.0, 1.0, 0.0])
    with pytest.raises(DomainError):
        as_unit_vector([1.0, 0.0])
    assert np.linalg.norm(as_unit_vector([1.0, 1e-10, 0.0])) == pytest.approx(1.0, abs=1e-15)


def test_align_rotation_identity():
    """Equal inputs give the identity."""
    z = np.array([0.0, 0.0, 1.0])
    assert np.allclose(align_rotation(z, z), np.eye(3), atol=1e-12)


def test_align_rotation_antipodal():
    """Antipodal inputs give a proper rotation by pi."""
    z = np.array([0.0, 0.0, 1.0])
    r = align_rotation(z, -z)
    assert np.allclose(r @ z, -z, atol=1e-9)
    assert is_rotation(r)


def test_align_rotation_preserves_norms(rng):
    """x axis to z axis, norms of random vectors preserved."""
    r = align_rotation(np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]))
    assert np.allclose(r @ [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], atol=1e-9)

    vs = rng.normal((100, 3))
    assert np.allclose(np.linalg.norm(vs @ r.T, axis=1), np.linalg.norm(vs, axis=1), atol=1e-9)
    assert is_rotation(r)


def test_align_rotation_round_trip(rng):
    """align_rotation(v, u) @ align_rotation(u, v) is the identity."""
    us = uniform_sphere_batch(rng, 50)
    vs = uniform_sphere_batch(rng, 50)
    for u, v in zip(us, vs):
        r_uv = align_rotation(u, v)
        assert np.allclose(r_uv @ u, v, atol=1e-9)
        assert np.allclose(align_rotation(v, u) @ r_uv, np.eye(3), atol=1e-8)


def test_rotate_about_axis():
    """Quarter turn about z maps x to y."""
    out = rotate_about_axis(np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]), math.pi / 2)
    assert np.allclose(out, [0.0, 1.0, 0.0], atol=1e-12)


def test_uniform_sphere_moments():
    """Uniform draws have near-zero mean."""
    xs = uniform_sphere_batch(RandomStream(0), 100_000)
    assert np.allclose(np.linalg.norm(xs, axis=1), 1.0, atol=1e-12)
    assert np.linalg.norm(xs.mean(axis=0)) < 0.02
    assert abs(xs[:, 2].mean()) < 0.01


def test_random_stream_determinism():
    """Same seed gives bit-identical draws; split streams are reproducible."""
    assert np.array_equal(uniform_sphere(RandomStream(42)), uniform_sphere(RandomStream(42)))

    a = [s.uniform(5) for s in RandomStream(7).split(3)]
    b = [s.uniform(5) for s in RandomStream(7).split(3)]
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
    assert not np.array_equal(a[0], a[1])


def test_random_stream_rejects_negative_seed():
    """Test seed validation."""
    with pytest.raises(DomainError):
        RandomStream(-1)
