"""
Loss Functions

Optimization objectives for contact-grasp learning:
- Analytical Bayesian loss (expected log-likelihood under the vMF posterior
  plus discounted posterior entropy) and its gradient
- Cosine, negative log-likelihood, soft approach-bin, L1 width, BCE and
  extended Chamfer losses
- Weighted total loss

Expected log-likelihood of a vMF likelihood vMF(x; mu, kappa) when mu itself
follows the posterior vMF(mu; mu0', kappa0'):

    E[log p] = log Z(kappa) + a3(kappa0') * kappa * x.mu0'

with a3(k) = coth(k) - 1/k.
"""

import logging
import math
from dataclasses import dataclass, fields
from typing import Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from src.natpn import Evidence, interpolated_mean, posterior_update, recover_observed_mu
from src.sphere_core import DomainError, a3, a3_prime, log_norm_const
from src.vmf import VmfParams, entropy, log_pdf


logger = logging.getLogger(__name__)

BCE_EPS = 1e-7
CHAMFER_TREE_THRESHOLD = 10_000
LOSS_KINDS = ('cosine', 'nll', 'bayesian')


@dataclass(frozen=True)
class BayesianLossConfig:
    """Entropy discount gamma of the Bayesian loss."""

    gamma: float = 1e-3

    def __post_init__(self):
        if not math.isfinite(self.gamma) or self.gamma < 0:
            raise DomainError(f"gamma must be non-negative, got {self.gamma}")


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the weighted total loss."""

    lambda_w: float = 10.0
    lambda_c: float = 0.1
    lambda_b: float = 0.1
    lambda_a: float = 0.1
    lambda_z: float = 0.0001
    lambda_rec: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value) or value < 0:
                raise DomainError(f"{f.name} must be non-negative, got {value}")


@dataclass(frozen=True)
class LossParts:
    """Per-sample loss terms entering the total loss."""

    width: float = 0.0
    contact: float = 0.0
    baseline: float = 0.0
    approach: float = 0.0
    density: float = 0.0
    reconstruction: float = 0.0


@dataclass(frozen=True)
class GradientRecord:
    """Partial derivatives of the Bayesian loss.

    d_observed_mu is the tangent-space gradient (orthogonal to mu_c).
    """

    d_observed_mu: np.ndarray
    d_lik_kappa: float
    d_evidence: float


def expected_log_likelihood(post: VmfParams, lik_kappa: float, target: np.ndarray) -> float:
    """Closed-form E_{mu ~ post}[log vMF(target; mu, lik_kappa)]."""
    dot = float(np.dot(target, post.mu))
    return float(log_norm_const(lik_kappa) + a3(post.kappa) * lik_kappa * dot)


def bayesian_loss(
    post: VmfParams,
    lik_kappa: float,
    target: np.ndarray,
    cfg: BayesianLossConfig
) -> float:
    """Negative expected log-likelihood minus gamma times posterior entropy."""
    return -expected_log_likelihood(post, lik_kappa, target) - cfg.gamma * entropy(post)


def cosine_loss(pred_mu: np.ndarray, target: np.ndarray) -> float:
    """1 - pred.target, in [0, 2]."""
    return 1.0 - float(np.dot(pred_mu, target))


def nll_loss(pred: VmfParams, target: np.ndarray) -> float:
    """Negative vMF log-likelihood of the target."""
    return -log_pdf(pred, target)


def grad_bayesian_loss(
    post: VmfParams,
    lik_kappa: float,
    target: np.ndarray,
    cfg: BayesianLossConfig,
    prior: VmfParams,
    ev: Evidence,
    observed_mu: np.ndarray = None,
) -> GradientRecord:
    """Analytic gradient of the Bayesian loss through the posterior update.

    The posterior is parameterized by (prior, mu_c, m) via
    :func:`src.natpn.posterior_update` and ``post`` must equal that update.
    When ``observed_mu`` is omitted it is recovered from (post, prior, m),
    which needs m > kappa0.

    Args:
        post: Posterior from posterior_update(prior, observed_mu, ev)
        lik_kappa: Likelihood concentration kappa_c
        target: Ground-truth direction
        cfg: Loss configuration
        prior: Prior parameters
        ev: Evidence m
        observed_mu: Likelihood mean mu_c

    Returns:
        GradientRecord with d/d mu_c (tangent), d/d kappa_c and d/d m

    Raises:
        DomainError: If observed_mu is omitted and m <= kappa0
    """
    if observed_mu is None:
        mu_c = recover_observed_mu(post, prior, ev)
    else:
        mu_c = np.asarray(observed_mu, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)

    big_k = prior.kappa + ev.m
    v = interpolated_mean(prior, mu_c, ev)
    v_norm = float(np.linalg.norm(v))
    mu_post = post.mu

    dot = float(np.dot(target, mu_post))
    a3_k = float(a3(big_k))
    a3p_k = float(a3_prime(big_k))

    d_lik_kappa = float(a3(lik_kappa)) - a3_k * dot

    # d(target . mu')/dv, mu' = v / |v|
    tangent_t = (target - dot * mu_post) / v_norm

    d_k_direct = -a3p_k * lik_kappa * dot + cfg.gamma * big_k * a3p_k
    d_dot_dm = float(np.dot(tangent_t, (mu_c - v) / big_k))
    d_evidence = d_k_direct - a3_k * lik_kappa * d_dot_dm

    g_mu = -a3_k * lik_kappa * (ev.m / big_k) * tangent_t
    g_mu = g_mu - np.dot(g_mu, mu_c) * mu_c

    return GradientRecord(g_mu, d_lik_kappa, float(d_evidence))


def bayesian_loss_from_update(
    prior: VmfParams,
    observed_mu: np.ndarray,
    ev: Evidence,
    lik_kappa: float,
    target: np.ndarray,
    cfg: BayesianLossConfig
) -> float:
    """Bayesian loss of the posterior obtained from (prior, mu_c, m)."""
    post = posterior_update(prior, observed_mu, ev)
    return bayesian_loss(post, lik_kappa, target, cfg)


def soft_bin_loss(
    scores: Sequence[float],
    target_approach: np.ndarray,
    bins: Sequence[np.ndarray]
) -> float:
    """Sum of squared residuals between bin scores and cosine targets."""
    scores = np.asarray(scores, dtype=np.float64)
    bins = np.asarray(bins, dtype=np.float64).reshape(-1, 3)
    if len(scores) != len(bins):
        raise ValueError(f"scores ({len(scores)}) and bins ({len(bins)}) differ in length")
    residual = scores - bins @ np.asarray(target_approach, dtype=np.float64)
    return float(np.sum(residual ** 2))


def l1_width_loss(pred_w: float, true_w: float) -> float:
    """Absolute width error in meters."""
    if pred_w < 0 or true_w < 0:
        raise ValueError(f"widths must be non-negative, got {pred_w}, {true_w}")
    return abs(pred_w - true_w)


def bce_loss(pred_p: float, label: int) -> float:
    """Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7]."""
    if not 0.0 <= pred_p <= 1.0:
        raise ValueError(f"pred_p must lie in [0, 1], got {pred_p}")
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    p = min(max(pred_p, BCE_EPS), 1.0 - BCE_EPS)
    return -(label * math.log(p) + (1 - label) * math.log(1.0 - p))


def chamfer_extended(p_set: np.ndarray, q_set: np.ndarray) -> float:
    """Symmetric sum of squared nearest-neighbor distances.

    Brute force for small sets, k-d tree above 1e4 points.
    """
    p_set = np.asarray(p_set, dtype=np.float64)
    q_set = np.asarray(q_set, dtype=np.float64)
    if len(p_set) == 0 or len(q_set) == 0:
        raise ValueError("chamfer distance needs two non-empty point sets")

    if max(len(p_set), len(q_set)) <= CHAMFER_TREE_THRESHOLD:
        d2 = cdist(p_set, q_set, 'sqeuclidean')
        return float(d2.min(axis=1).sum() + d2.min(axis=0).sum())

    d_pq, _ = cKDTree(q_set).query(p_set)
    d_qp, _ = cKDTree(p_set).query(q_set)
    return float(np.sum(d_pq ** 2) + np.sum(d_qp ** 2))


def total_loss(parts: Sequence[LossParts], w: LossWeights = LossWeights()) -> float:
    """Mean over samples of the weighted per-sample loss sum."""
    if not parts:
        return 0.0
    weighted = [
        w.lambda_w * p.width
        + w.lambda_c * p.contact
        + w.lambda_b * p.baseline
        + w.lambda_a * p.approach
        + w.lambda_z * p.density
        + w.lambda_rec * p.reconstruction
        for p in parts
    ]
    return float(np.mean(weighted))


def batch_loss_and_grad(
    kind: str,
    raw_mu: np.ndarray,
    lik_kappa: np.ndarray,
    targets: np.ndarray,
    prior_mu: np.ndarray = None,
    prior_kappa: float = 1.0,
    evidence: np.ndarray = None,
    gamma: float = 1e-3,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample losses and gradients for a batch of predictions.

    Args:
        kind: 'cosine', 'nll' or 'bayesian'
        raw_mu: (n, 3) unnormalized predicted directions
        lik_kappa: (n,) likelihood concentrations
        targets: (n, 3) ground-truth directions
        prior_mu: (n, 3) prior mean directions (bayesian only)
        prior_kappa: Prior concentration (bayesian only)
        evidence: (n,) evidence m (bayesian only)
        gamma: Entropy discount (bayesian only)

    Returns:
        Tuple of (losses, d loss / d raw_mu, d loss / d lik_kappa)
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"Unknown loss kind: {kind}")

    raw_norm = np.linalg.norm(raw_mu, axis=1, keepdims=True)
    mu_c = raw_mu / raw_norm

    if kind == 'cosine':
        dots = np.sum(targets * mu_c, axis=1)
        losses = 1.0 - dots
        d_mu = -targets
        d_kappa = np.zeros_like(lik_kappa)

    elif kind == 'nll':
        dots = np.sum(targets * mu_c, axis=1)
        losses = -log_norm_const(lik_kappa) - lik_kappa * dots
        d_mu = -lik_kappa[:, None] * targets
        d_kappa = a3(lik_kappa) - dots

    else:
        big_k = prior_kappa + evidence
        v = (prior_kappa * prior_mu + evidence[:, None] * mu_c) / big_k[:, None]
        v_norm = np.linalg.norm(v, axis=1, keepdims=True)
        mu_post = v / v_norm
        dots = np.sum(targets * mu_post, axis=1)
        a3_k = a3(big_k)

        post_entropy = -log_norm_const(big_k) - big_k * a3_k
        losses = -(log_norm_const(lik_kappa) + a3_k * lik_kappa * dots) - gamma * post_entropy

        tangent_t = (targets - dots[:, None] * mu_post) / v_norm
        d_mu = -(a3_k * lik_kappa * evidence / big_k)[:, None] * tangent_t
        d_kappa = a3(lik_kappa) - a3_k * dots

    # chain rule through mu_c = raw / |raw|
    d_mu = d_mu - np.sum(d_mu * mu_c, axis=1, keepdims=True) * mu_c
    d_raw = d_mu / raw_norm

    return losses, d_raw, d_kappa
