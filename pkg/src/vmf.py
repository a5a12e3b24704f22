"""
von Mises-Fisher Distribution

The 3-D vMF family used as likelihood, prior and posterior for baseline
directions: density, entropy, exact sampling, the conjugate posterior of the
mean direction and its MAP estimate.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.sphere_core import (
    DomainError,
    RandomStream,
    Z_AXIS,
    a3,
    align_rotation,
    as_unit_vector,
    log_norm_const,
    uniform_sphere_batch,
)


logger = logging.getLogger(__name__)

# Below this concentration the sampler draws cos(theta) uniformly
UNIFORM_KAPPA = 1e-6
DEGENERATE_NORM = 1e-12


class DegeneratePosteriorError(ValueError):
    """Raised when the posterior natural parameter vanishes."""


@dataclass(frozen=True, eq=False)
class VmfParams:
    """Mean direction and concentration of a 3-D vMF distribution.

    kappa = 0 is the uniform distribution; mu must still be a unit vector.
    """

    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, 'mu', as_unit_vector(self.mu))
        kappa = float(self.kappa)
        if not np.isfinite(kappa) or kappa < 0:
            raise DomainError(f"kappa must be finite and non-negative, got {self.kappa}")
        object.__setattr__(self, 'kappa', kappa)

    def to_dict(self) -> dict:
        return {'mu': self.mu.tolist(), 'kappa': self.kappa}


def log_pdf(p: VmfParams, x: np.ndarray) -> float:
    """Log density log Z(kappa) + kappa * mu.x at a unit vector x."""
    return float(log_norm_const(p.kappa) + p.kappa * float(np.dot(p.mu, x)))


def log_pdf_batch(p: VmfParams, xs: np.ndarray) -> np.ndarray:
    """Vectorized :func:`log_pdf` over an (n, 3) array."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    return log_norm_const(p.kappa) + p.kappa * (xs @ p.mu)


def entropy(p: VmfParams) -> float:
    """Differential entropy -log Z(k) - k coth(k) + 1.

    Written as -log Z(k) - k * a3(k), which tends continuously to log(4 pi).
    """
    return float(-log_norm_const(p.kappa) - p.kappa * a3(p.kappa))


def mean_resultant_length(p: VmfParams) -> float:
    """E[mu.x] under p."""
    return float(a3(p.kappa))


def _sample_cos_angle(kappa: float, u: np.ndarray) -> np.ndarray:
    """Inverse CDF of w = mu.x for the 3-D vMF."""
    if kappa < UNIFORM_KAPPA:
        return 2.0 * u - 1.0
    w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    return np.clip(w, -1.0, 1.0)


def sample(p: VmfParams, n: int, rng: RandomStream) -> np.ndarray:
    """Draw n exact samples by inversion of the 3-D marginal.

    Args:
        p: Distribution parameters
        n: Number of samples (>= 1)
        rng: Random stream

    Returns:
        (n, 3) array of unit vectors
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if p.kappa == 0.0:
        return uniform_sphere_batch(rng, n)

    u = rng.uniform(n)
    phi = 2.0 * np.pi * rng.uniform(n)
    w = _sample_cos_angle(p.kappa, u)
    r = np.sqrt(np.maximum(0.0, 1.0 - w * w))

    local = np.stack([r * np.cos(phi), r * np.sin(phi), w], axis=-1)
    rotation = align_rotation(Z_AXIS, p.mu)
    return local @ rotation.T


def _natural_parameter(prior: VmfParams, lik_kappa: float, data: Sequence) -> np.ndarray:
    if lik_kappa < 0:
        raise DomainError(f"lik_kappa must be non-negative, got {lik_kappa}")
    data = np.asarray(data, dtype=np.float64).reshape(-1, 3)
    if len(data) == 0 and prior.kappa <= 0:
        raise ValueError("conjugate update needs data or a prior with kappa > 0")
    return prior.kappa * prior.mu + lik_kappa * data.sum(axis=0)


def conjugate_posterior(prior: VmfParams, lik_kappa: float, data: Sequence) -> VmfParams:
    """Exact posterior of the mean direction under a vMF prior.

    theta = kappa0 * mu0 + kappa * sum(x_i); posterior is vMF(theta/|theta|, |theta|).

    Args:
        prior: Prior on the mean direction
        lik_kappa: Known likelihood concentration
        data: Observed unit vectors

    Returns:
        Posterior parameters

    Raises:
        DegeneratePosteriorError: If |theta| < 1e-12
    """
    theta = _natural_parameter(prior, lik_kappa, data)
    norm = float(np.linalg.norm(theta))
    if norm < DEGENERATE_NORM:
        raise DegeneratePosteriorError(
            f"Posterior natural parameter vanished (|theta|={norm:.3e})"
        )
    return VmfParams(theta / norm, norm)


def map_estimate(prior: VmfParams, lik_kappa: float, data: Sequence) -> np.ndarray:
    """MAP mean direction, theta / |theta|."""
    return conjugate_posterior(prior, lik_kappa, data).mu
