"""
Directional Evidence Toolkit

Closed-form 3-D von Mises-Fisher statistics, density-based evidence with
pseudo-count posterior updates, the analytical Bayesian loss, Power Spherical
surrogate sampling, contact-grasp geometry, Monte-Carlo verification and a
synthetic experiment harness.
"""

__version__ = '0.1.0'

from src.vmf import VmfParams, conjugate_posterior, entropy
from src.natpn import Evidence, informative_prior, posterior_update
from src.losses import BayesianLossConfig, bayesian_loss, grad_bayesian_loss
from src.sphere_core import RandomStream

__all__ = [
    'VmfParams',
    'conjugate_posterior',
    'entropy',
    'Evidence',
    'informative_prior',
    'posterior_update',
    'BayesianLossConfig',
    'bayesian_loss',
    'grad_bayesian_loss',
    'RandomStream',
]
