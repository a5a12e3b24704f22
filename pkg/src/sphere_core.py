"""
Sphere Core

Unit-sphere primitives shared by every other module:
- Numerically stable special functions for the 3-D von Mises-Fisher family
- Unit vector helpers and rotations
- Counter-based random streams with deterministic splitting
"""

import logging
import math
from typing import List, Optional, Union

import numpy as np


logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

LOG_4PI = math.log(4.0 * math.pi)
LOG_2 = math.log(2.0)

# Series/asymptotic switch-over points
LOG_SINH_SMALL = 1e-4
LOG_SINH_LARGE = 20.0
A3_SMALL = 1e-3
A3_PRIME_SMALL = 5e-2

UNIT_TOL = 1e-9
DOWN = np.array([0.0, 0.0, -1.0])
Z_AXIS = np.array([0.0, 0.0, 1.0])


class DomainError(ValueError):
    """Raised when an argument lies outside a function's domain."""


def _check_nonneg(k: ArrayLike, name: str = 'k') -> np.ndarray:
    """Validate a non-negative finite argument and return it as an array."""
    arr = np.asarray(k, dtype=np.float64)
    if np.any(np.isnan(arr)) or np.any(np.isposinf(arr)):
        raise DomainError(f"{name} must be finite, got {k!r}")
    if np.any(arr < 0):
        raise DomainError(f"{name} must be non-negative, got {k!r}")
    return arr


def _as_output(arr: np.ndarray) -> ArrayLike:
    return float(arr) if arr.ndim == 0 else arr


def log_sinh(k: ArrayLike) -> ArrayLike:
    """Compute log(sinh k) without overflow.

    Uses ``log k + k^2/6 - k^4/180`` below 1e-4 and
    ``k - log 2 + log1p(-exp(-2k))`` above 20.

    Args:
        k: Non-negative argument (scalar or array)

    Returns:
        log(sinh k); ``-inf`` at k = 0

    Raises:
        DomainError: If k is negative or not finite
    """
    arr = _check_nonneg(k)
    out = np.empty_like(arr)

    small = arr < LOG_SINH_SMALL
    large = arr > LOG_SINH_LARGE
    mid = ~(small | large)

    with np.errstate(divide='ignore'):
        ks = arr[small]
        out[small] = np.log(ks) + ks * ks / 6.0 - ks ** 4 / 180.0
    kl = arr[large]
    out[large] = kl - LOG_2 + np.log1p(-np.exp(-2.0 * kl))
    out[mid] = np.log(np.sinh(arr[mid]))

    return _as_output(out)


def log_norm_const(k: ArrayLike) -> ArrayLike:
    """Log normalizer of the 3-D vMF density, log(k / (4 pi sinh k)).

    Args:
        k: Concentration (scalar or array)

    Returns:
        log Z(k); the continuous limit -log(4 pi) at k = 0
    """
    arr = _check_nonneg(k)
    out = np.empty_like(arr)

    small = arr < LOG_SINH_SMALL
    ks = arr[small]
    # log(k / sinh k) = -k^2/6 + k^4/180 - ...
    out[small] = -LOG_4PI - ks * ks / 6.0 + ks ** 4 / 180.0

    kb = arr[~small]
    out[~small] = np.log(kb) - LOG_4PI - log_sinh(kb)

    return _as_output(out)


def a3(k: ArrayLike) -> ArrayLike:
    """Mean resultant length of the 3-D vMF, coth(k) - 1/k.

    Args:
        k: Concentration (scalar or array)

    Returns:
        Value in [0, 1)
    """
    arr = _check_nonneg(k)
    out = np.empty_like(arr)

    small = arr < A3_SMALL
    ks = arr[small]
    out[small] = ks / 3.0 - ks ** 3 / 45.0

    kb = arr[~small]
    out[~small] = 1.0 / np.tanh(kb) - 1.0 / kb

    return _as_output(out)


def a3_prime(k: ArrayLike) -> ArrayLike:
    """Derivative of :func:`a3`, 1/k^2 - 1/sinh^2(k).

    The direct form cancels badly near zero, so a series is used below 0.05.
    """
    arr = _check_nonneg(k)
    out = np.empty_like(arr)

    small = arr < A3_PRIME_SMALL
    ks2 = arr[small] ** 2
    out[small] = 1.0 / 3.0 - ks2 / 15.0 + 2.0 * ks2 ** 2 / 189.0 - ks2 ** 3 / 675.0

    kb = arr[~small]
    # csch^2(k) = 4 e^{-2k} / (1 - e^{-2k})^2, finite for any k
    e2 = np.exp(-2.0 * kb)
    out[~small] = 1.0 / (kb * kb) - 4.0 * e2 / (1.0 - e2) ** 2

    return _as_output(out)


def normalize(v: np.ndarray) -> np.ndarray:
    """Return v scaled to unit length.

    Raises:
        DomainError: If v is (numerically) zero or not finite
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm < 1e-300:
        raise DomainError(f"Cannot normalize vector {v.tolist()}")
    return v / norm


def as_unit_vector(v, tol: float = UNIT_TOL) -> np.ndarray:
    """Validate that v is a unit 3-vector.

    Args:
        v: Sequence of three floats
        tol: Allowed deviation of the norm from 1

    Returns:
        The vector as a float64 array, renormalized to remove rounding residue

    Raises:
        DomainError: If v has the wrong shape or its norm deviates by more than tol
    """
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (3,):
        raise DomainError(f"Expected a 3-vector, got shape {arr.shape}")
    norm = np.linalg.norm(arr)
    if not np.isfinite(norm) or abs(norm - 1.0) > tol:
        raise DomainError(f"Expected a unit vector, got norm {norm}")
    return arr / norm


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix [v]x."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def least_aligned_axis(v: np.ndarray) -> np.ndarray:
    """Coordinate axis with the smallest |component| of v (lowest index on ties)."""
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(v)))] = 1.0
    return axis


def align_rotation(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Minimal rotation mapping ``source`` onto ``target``.

    Antipodal inputs get a rotation by pi about the axis perpendicular to
    ``source`` built from its least aligned coordinate axis.

    Args:
        source: Unit vector
        target: Unit vector

    Returns:
        3x3 rotation matrix R with R @ source == target
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)

    c = float(np.dot(source, target))
    if 1.0 + c < 1e-12:
        e = least_aligned_axis(source)
        perp = normalize(e - np.dot(e, source) * source)
        return 2.0 * np.outer(perp, perp) - np.eye(3)

    vx = skew(np.cross(source, target))
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


def rotate_about_axis(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation of v about a unit axis."""
    cos_a = math.cos(angle)
    sin_a = math.sin(angle)
    return (
        v * cos_a
        + np.cross(axis, v) * sin_a
        + axis * np.dot(axis, v) * (1.0 - cos_a)
    )


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    """Check orthonormality and unit determinant."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        return False
    return (
        np.allclose(r.T @ r, np.eye(3), atol=tol)
        and abs(np.linalg.det(r) - 1.0) < tol
    )


class RandomStream:
    """Deterministic random stream on the counter-based Philox generator.

    Two streams built from the same seed produce bit-identical draws.
    Sub-streams from :meth:`split` are derived through ``SeedSequence.spawn``
    and are therefore reproducible too. A stream must not be shared between
    threads; split it instead.
    """

    def __init__(self, seed: int = 0, _seed_sequence: Optional[np.random.SeedSequence] = None):
        """Initialize the stream.

        Args:
            seed: Non-negative 64-bit seed
        """
        if _seed_sequence is None:
            if int(seed) < 0:
                raise DomainError(f"seed must be non-negative, got {seed}")
            _seed_sequence = np.random.SeedSequence(int(seed))
        self.seed = int(seed)
        self._seed_sequence = _seed_sequence
        self.generator = np.random.Generator(np.random.Philox(_seed_sequence))

    def split(self, n: int) -> List['RandomStream']:
        """Derive n independent sub-streams deterministically."""
        children = self._seed_sequence.spawn(n)
        return [RandomStream(self.seed, _seed_sequence=child) for child in children]

    def uniform(self, size=None) -> np.ndarray:
        return self.generator.random(size)

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self.generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)


def uniform_sphere_batch(rng: RandomStream, n: int) -> np.ndarray:
    """Draw n points uniformly on the unit sphere (normalized Gaussians)."""
    out = rng.normal((n, 3))
    out /= np.linalg.norm(out, axis=-1, keepdims=True)
    return out


def uniform_sphere(rng: RandomStream) -> np.ndarray:
    """Draw one point uniformly on the unit sphere."""
    return uniform_sphere_batch(rng, 1)[0]
