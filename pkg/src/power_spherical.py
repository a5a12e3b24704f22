"""
Power Spherical Distribution

Sampling surrogate for vMF posteriors on the 2-sphere. Density is
proportional to (1 + mu.x)^kappa; samples are exact and rejection free.
No conjugate update is provided, this family is used for sampling only.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from src.sphere_core import DomainError, RandomStream, Z_AXIS, as_unit_vector
from src.vmf import VmfParams


logger = logging.getLogger(__name__)

LOG_PI = math.log(math.pi)
LOG_2 = math.log(2.0)


@dataclass(frozen=True, eq=False)
class PsParams:
    """Mean direction and concentration of a Power Spherical distribution."""

    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, 'mu', as_unit_vector(self.mu))
        kappa = float(self.kappa)
        if not np.isfinite(kappa) or kappa < 0:
            raise DomainError(f"kappa must be finite and non-negative, got {self.kappa}")
        object.__setattr__(self, 'kappa', kappa)


def log_normalizer(kappa: float) -> float:
    """log N(kappa) = (kappa + 2) log 2 + log pi - log(kappa + 1) for p = 3."""
    return (kappa + 2.0) * LOG_2 + LOG_PI - math.log(kappa + 1.0)


def ps_log_pdf_batch(p: PsParams, xs: np.ndarray) -> np.ndarray:
    """Vectorized log density; -inf at x = -mu when kappa > 0."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    log_norm = log_normalizer(p.kappa)
    if p.kappa == 0.0:
        return np.full(len(xs), -log_norm)
    dots = np.clip(xs @ p.mu, -1.0, 1.0)
    with np.errstate(divide='ignore'):
        return p.kappa * np.log1p(dots) - log_norm


def ps_log_pdf(p: PsParams, x: np.ndarray) -> float:
    """Log density at a single unit vector."""
    return float(ps_log_pdf_batch(p, x)[0])


def _householder_to(mu: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Reflect rows of ys by the Householder map sending the z axis to mu."""
    u_hat = Z_AXIS - mu
    norm = np.linalg.norm(u_hat)
    if norm < 1e-12:
        return ys
    u = u_hat / norm
    return ys - 2.0 * np.outer(ys @ u, u)


def ps_sample(p: PsParams, n: int, rng: RandomStream) -> np.ndarray:
    """Draw n exact samples.

    z ~ Beta(kappa + 1, 1) by inversion (u^(1/(kappa+1))), t = 2z - 1 is the
    cosine to the pole, and the tangential part is uniform on the circle.

    Returns:
        (n, 3) array of unit vectors
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")

    u = rng.uniform(n)
    phi = 2.0 * np.pi * rng.uniform(n)
    z = u ** (1.0 / (p.kappa + 1.0))
    t = 2.0 * z - 1.0
    r = np.sqrt(np.maximum(0.0, 1.0 - t * t))

    ys = np.stack([r * np.cos(phi), r * np.sin(phi), t], axis=-1)
    return _householder_to(p.mu, ys)


def surrogate_from_vmf(v: VmfParams) -> PsParams:
    """Reinterpret vMF parameters as Power Spherical parameters."""
    return PsParams(v.mu, v.kappa)
