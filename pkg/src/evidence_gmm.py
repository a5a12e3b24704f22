"""
Evidence Density Model

Diagonal-covariance Gaussian mixture over feature vectors, fit by
expectation-maximization. Its density p(z) feeds the evidence
m = N_H * p(z) of the posterior update.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import kmeans_plusplus

from src.sphere_core import RandomStream
from src.utils import read_json_file, write_json_file


logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
DEFAULT_COMPONENTS = 20
LOG_2PI = math.log(2.0 * math.pi)
# Responsibility mass below which a component is considered collapsed
MIN_COMPONENT_MASS = 1e-8


@dataclass(eq=False)
class GmmModel:
    """K-component diagonal Gaussian mixture."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood_trace: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))

        if self.means.shape != self.variances.shape or len(self.weights) != len(self.means):
            raise ValueError(
                f"Inconsistent GMM shapes: weights {self.weights.shape}, "
                f"means {self.means.shape}, variances {self.variances.shape}"
            )
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError("GMM weights must form a probability simplex")
        if np.any(self.variances < VARIANCE_FLOOR):
            raise ValueError(f"GMM variances must be >= {VARIANCE_FLOOR}")

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _component_log_prob(model_means: np.ndarray, model_vars: np.ndarray, zs: np.ndarray) -> np.ndarray:
    """(n, k) matrix of log N(z_i; mean_j, diag var_j)."""
    diff2 = (zs[:, None, :] - model_means[None, :, :]) ** 2
    return -0.5 * (
        np.sum(diff2 / model_vars[None, :, :], axis=2)
        + np.sum(np.log(model_vars), axis=1)[None, :]
        + zs.shape[1] * LOG_2PI
    )


def _check_features(model: GmmModel, zs) -> np.ndarray:
    zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
    if zs.shape[1] != model.dim:
        raise ValueError(f"Feature dimension {zs.shape[1]} does not match model dimension {model.dim}")
    return zs


def log_density_batch(model: GmmModel, zs) -> np.ndarray:
    """Log mixture density for an (n, d) feature array."""
    zs = _check_features(model, zs)
    log_prob = _component_log_prob(model.means, model.variances, zs)
    with np.errstate(divide='ignore'):
        return logsumexp(log_prob + np.log(model.weights)[None, :], axis=1)


def log_density(model: GmmModel, z) -> float:
    """Log mixture density of a single feature vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"Expected a single feature vector, got shape {z.shape}")
    return float(log_density_batch(model, z[None, :])[0])


def responsibilities(model: GmmModel, zs) -> np.ndarray:
    """Posterior component probabilities, shape (n, k)."""
    zs = _check_features(model, zs)
    with np.errstate(divide='ignore'):
        joint = _component_log_prob(model.means, model.variances, zs) + np.log(model.weights)[None, :]
    return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))


def fit_em(
    data,
    k: int = DEFAULT_COMPONENTS,
    max_iters: int = 200,
    tol: float = 1e-6,
    rng: Optional[RandomStream] = None,
) -> GmmModel:
    """Fit a diagonal GMM by EM with k-means++ initialization.

    Stops when the mean log-likelihood improves by less than ``tol`` or after
    ``max_iters`` iterations. Collapsed components are re-seeded at the datum
    with the lowest likelihood under the current model.

    Args:
        data: (n, d) feature array with n >= k
        k: Number of components
        max_iters: Maximum EM iterations
        tol: Convergence threshold on the mean log-likelihood
        rng: Random stream for seeding

    Returns:
        Fitted model with its log-likelihood trace
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n, dim = data.shape
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < k:
        raise ValueError(f"Need at least k={k} samples, got {n}")
    if not np.all(np.isfinite(data)):
        raise ValueError("Feature data must be finite")
    rng = rng or RandomStream(0)

    global_var = np.maximum(data.var(axis=0), VARIANCE_FLOOR)
    seed = int(rng.integers(0, 2**31 - 1))
    means, _ = kmeans_plusplus(data, n_clusters=k, random_state=seed)
    means = means.astype(np.float64)
    variances = np.tile(global_var, (k, 1))
    weights = np.full(k, 1.0 / k)

    logger.info(f"Fitting GMM: n={n}, d={dim}, k={k}")

    trace: List[float] = []
    for iteration in range(max_iters):
        # E-step
        with np.errstate(divide='ignore'):
            joint = _component_log_prob(means, variances, data) + np.log(weights)[None, :]
        per_point = logsumexp(joint, axis=1)
        log_lik = float(per_point.mean())
        trace.append(log_lik)
        resp = np.exp(joint - per_point[:, None])

        if iteration > 0 and log_lik - trace[-2] < tol:
            logger.debug(f"EM converged after {iteration} iterations (mean log-lik {log_lik:.6f})")
            break

        # M-step
        mass = resp.sum(axis=0)
        collapsed = mass < MIN_COMPONENT_MASS
        safe_mass = np.where(collapsed, 1.0, mass)
        means = (resp.T @ data) / safe_mass[:, None]
        variances = (resp.T @ data ** 2) / safe_mass[:, None] - means ** 2
        variances = np.maximum(variances, VARIANCE_FLOOR)
        weights = mass / n

        if np.any(collapsed):
            worst = np.argsort(per_point)
            for slot, j in enumerate(np.flatnonzero(collapsed)):
                idx = worst[slot % n]
                logger.warning(f"GMM component {j} collapsed, re-seeding at datum {idx}")
                means[j] = data[idx]
                variances[j] = global_var
                weights[j] = 1.0 / n
            weights = weights / weights.sum()
    else:
        # last M-step is not yet in the trace
        weights = weights / weights.sum()
        with np.errstate(divide='ignore'):
            joint = _component_log_prob(means, variances, data) + np.log(weights)[None, :]
        trace.append(float(logsumexp(joint, axis=1).mean()))
        logger.debug(f"EM stopped at max_iters={max_iters}")

    model = GmmModel(weights / weights.sum(), means, variances, log_likelihood_trace=trace)
    logger.info(f"GMM fit done: {len(trace)} iterations, mean log-lik {trace[-1]:.6f}")
    return model


def model_to_dict(model: GmmModel) -> dict:
    return {
        'k': model.k,
        'dim': model.dim,
        'weights': model.weights.tolist(),
        'means': model.means.tolist(),
        'variances': model.variances.tolist(),
    }


def model_from_dict(data: dict) -> GmmModel:
    try:
        model = GmmModel(data['weights'], data['means'], data['variances'])
        k, dim = int(data['k']), int(data['dim'])
    except (KeyError, TypeError) as e:
        raise ValueError(f"Malformed GMM document: missing or invalid field {e}") from e
    if model.k != k or model.dim != dim:
        raise ValueError("GMM document header does not match its arrays")
    return model


def save_model(model: GmmModel, filepath: str) -> None:
    write_json_file(filepath, model_to_dict(model))


def load_model(filepath: str) -> GmmModel:
    return model_from_dict(read_json_file(filepath))
