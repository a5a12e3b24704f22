"""
Natural Posterior Update

Evidence from feature density, certainty budget, informative prior, and the
pseudo-count posterior update for the vMF mean direction:

    mu0' = (kappa0 * mu0 + m * mu_c) / (kappa0 + m),   kappa0' = kappa0 + m

The interpolated mean is re-normalized before use as a vMF mean, while the
concentration follows the additive rule. The exact conjugate alternative
(kappa = |theta|) lives in :func:`src.vmf.conjugate_posterior`.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from src.sphere_core import DomainError, as_unit_vector
from src.vmf import DEGENERATE_NORM, DegeneratePosteriorError, VmfParams


logger = logging.getLogger(__name__)

PRIOR_KAPPA = 1.0
DEFAULT_M_MAX = 1e6


@dataclass(frozen=True)
class Evidence:
    """Pseudo-count m >= 0; ``clamped`` marks values cut at the cap."""

    m: float
    clamped: bool = False

    def __post_init__(self):
        if not math.isfinite(self.m) or self.m < 0:
            raise DomainError(f"evidence must be finite and non-negative, got {self.m}")


@dataclass(frozen=True)
class CertaintyBudget:
    """Scale N_H mapping feature density to evidence."""

    n_h: float

    def __post_init__(self):
        if not math.isfinite(self.n_h) or self.n_h <= 0:
            raise DomainError(f"certainty budget must be positive, got {self.n_h}")


@dataclass(frozen=True, eq=False)
class PosteriorAccumulator:
    """Raw natural-parameter sums: kappa0*mu0 + sum(m_i*mu_i) and kappa0 + sum(m_i)."""

    weighted_sum: np.ndarray = field(default_factory=lambda: np.zeros(3))
    total_count: float = 0.0

    @classmethod
    def from_prior(cls, prior: VmfParams) -> 'PosteriorAccumulator':
        return cls(prior.kappa * prior.mu, prior.kappa)


def informative_prior(surface_normal: np.ndarray, kappa0: float = PRIOR_KAPPA) -> VmfParams:
    """Prior aligned with the negative surface normal, kappa0 = 1 by default."""
    normal = as_unit_vector(surface_normal)
    return VmfParams(-normal, kappa0)


def scaled_log_density(log_density, dim: int, mode: str = 'raw'):
    """Apply the density normalization switch.

    Args:
        log_density: Log density value(s)
        dim: Feature dimension
        mode: 'raw' (unchanged) or 'per_dim' (divided by the dimension)
    """
    if mode == 'raw':
        return log_density
    if mode == 'per_dim':
        return np.asarray(log_density) / dim if np.ndim(log_density) else log_density / dim
    raise ValueError(f"Unknown density normalization: {mode}")


def evidence_from_log_density(
    log_density: float,
    budget: CertaintyBudget,
    m_max: float = DEFAULT_M_MAX
) -> Evidence:
    """Evidence m = clamp(N_H * exp(log_density), 0, m_max).

    Args:
        log_density: Log feature density (may be -inf)
        budget: Certainty budget
        m_max: Evidence cap

    Returns:
        Evidence, flagged when clamped

    Raises:
        ValueError: If log_density is NaN or +inf
    """
    log_density = float(log_density)
    if math.isnan(log_density) or log_density == math.inf:
        raise ValueError(f"log_density must be finite or -inf, got {log_density}")
    if log_density == -math.inf:
        return Evidence(0.0)

    log_m = math.log(budget.n_h) + log_density
    if log_m >= math.log(m_max):
        logger.warning(f"Evidence clamped to m_max={m_max:g} (log m={log_m:.3f})")
        return Evidence(float(m_max), clamped=True)
    return Evidence(math.exp(log_m))


def evidence_batch(
    log_densities: np.ndarray,
    budget: CertaintyBudget,
    m_max: float = DEFAULT_M_MAX
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized evidence; returns (m, clamped mask)."""
    log_densities = np.asarray(log_densities, dtype=np.float64)
    if np.any(np.isnan(log_densities)) or np.any(np.isposinf(log_densities)):
        raise ValueError("log densities must be finite or -inf")

    log_m = math.log(budget.n_h) + log_densities
    clamped = log_m >= math.log(m_max)
    with np.errstate(over='ignore'):
        m = np.where(clamped, m_max, np.exp(np.minimum(log_m, math.log(m_max))))
    if np.any(clamped):
        logger.debug(f"{int(clamped.sum())} of {len(m)} evidence values clamped")
    return m, clamped


def interpolated_mean(prior: VmfParams, observed_mu: np.ndarray, ev: Evidence) -> np.ndarray:
    """Pre-normalization posterior mean (kappa0*mu0 + m*mu_c) / (kappa0 + m)."""
    total = prior.kappa + ev.m
    if total <= 0:
        raise ValueError("posterior update needs prior.kappa + m > 0")
    return (prior.kappa * prior.mu + ev.m * np.asarray(observed_mu, dtype=np.float64)) / total


def interpolation_norm(prior: VmfParams, observed_mu: np.ndarray, ev: Evidence) -> float:
    """Length of the interpolated mean before re-normalization, in [0, 1].

    1 means prior and observation agree; values near 0 flag an update that
    cancels itself out.
    """
    return float(np.linalg.norm(interpolated_mean(prior, observed_mu, ev)))


def recover_observed_mu(post: VmfParams, prior: VmfParams, ev: Evidence) -> np.ndarray:
    """Invert :func:`posterior_update` for the likelihood mean mu_c.

    kappa0*mu0 + m*mu_c = s*mu0' for some s > 0 with |s*mu0' - kappa0*mu0| = m.
    The quadratic in s has exactly one positive root when m > kappa0; below
    that two observations map to the same posterior.

    Raises:
        DomainError: If m <= kappa0
    """
    k0, m = prior.kappa, ev.m
    if not m > k0:
        raise DomainError(
            f"observed mean is not identifiable from the posterior when m={m} <= kappa0={k0}"
        )
    c = float(np.dot(post.mu, prior.mu))
    s = k0 * c + math.sqrt(m * m - k0 * k0 * (1.0 - c * c))
    vec = (s * post.mu - k0 * prior.mu) / m
    return vec / np.linalg.norm(vec)


def posterior_update(prior: VmfParams, observed_mu: np.ndarray, ev: Evidence) -> VmfParams:
    """Pseudo-count posterior update with a re-normalized mean.

    The discarded length is available from :func:`interpolation_norm`.

    Args:
        prior: Prior vMF parameters
        observed_mu: Predicted likelihood mean direction mu_c
        ev: Evidence for this observation

    Returns:
        VmfParams(normalized interpolated mean, kappa0 + m)

    Raises:
        DegeneratePosteriorError: If the interpolated vector has norm < 1e-12
    """
    if ev.m == 0.0:
        return prior

    vec = interpolated_mean(prior, observed_mu, ev)
    norm = interpolation_norm(prior, observed_mu, ev)
    if norm < DEGENERATE_NORM:
        raise DegeneratePosteriorError(
            f"Interpolated posterior mean vanished (norm={norm:.3e})"
        )
    logger.debug(f"Posterior update: m={ev.m:.4g}, pre-normalization norm={norm:.6f}")
    return VmfParams(vec / norm, prior.kappa + ev.m)


def accumulate(
    acc: PosteriorAccumulator,
    observed_mu: np.ndarray,
    ev: Evidence
) -> PosteriorAccumulator:
    """Add one observation's weighted sufficient statistic."""
    observed_mu = np.asarray(observed_mu, dtype=np.float64)
    return PosteriorAccumulator(
        acc.weighted_sum + ev.m * observed_mu,
        acc.total_count + ev.m,
    )


def merge(a: PosteriorAccumulator, b: PosteriorAccumulator) -> PosteriorAccumulator:
    """Field-wise sum of two partial accumulators."""
    return PosteriorAccumulator(a.weighted_sum + b.weighted_sum, a.total_count + b.total_count)


def finalize(acc: PosteriorAccumulator) -> VmfParams:
    """Posterior with normalized mean and additive concentration."""
    norm = float(np.linalg.norm(acc.weighted_sum))
    if acc.total_count <= 0 or norm < DEGENERATE_NORM:
        raise DegeneratePosteriorError(
            f"Accumulator is degenerate (norm={norm:.3e}, count={acc.total_count})"
        )
    return VmfParams(acc.weighted_sum / norm, acc.total_count)
