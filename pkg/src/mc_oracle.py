"""
Monte-Carlo Oracle

Stochastic estimators with standard errors for the closed-form quantities
(expected log-likelihood under the posterior, entropy), the z-score test
used to compare them, and the grid verification run behind ``verify-mc``.

Estimation is chunked: the stream is split into one sub-stream per chunk and
chunk results are concatenated in chunk order, so the estimate does not depend
on the number of worker threads.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from src.losses import expected_log_likelihood
from src.power_spherical import ps_sample, surrogate_from_vmf
from src.sphere_core import RandomStream, Z_AXIS, log_norm_const
from src.utils import ProgressTracker
from src.vmf import VmfParams, entropy, log_pdf_batch, sample as vmf_sample


logger = logging.getLogger(__name__)

MIN_SAMPLES = 100
DEFAULT_CHUNK_SIZE = 50_000
SAMPLER_KINDS = ('vmf', 'ps')

GRID_KAPPA_POST = (0.1, 1.0, 2.0, 5.0, 50.0)
GRID_KAPPA_LIK = (0.5, 2.0, 5.0, 10.0)
GRID_DOT = (-1.0, 0.0, 0.5, 0.8, 1.0)
ENTROPY_KAPPAS = (0.1, 1.0, 5.0, 50.0)

# reference point for the PS surrogate bias report
BIAS_KAPPA_POST = 2.0
BIAS_KAPPA_LIK = 5.0
BIAS_DOT = 0.8


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with its standard error."""

    value: float
    std_error: float
    samples: int

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError(f"std_error must be non-negative, got {self.std_error}")
        if self.samples < 2:
            raise ValueError(f"samples must be >= 2, got {self.samples}")


def _estimate(values: np.ndarray) -> McEstimate:
    n = len(values)
    if np.all(values == values[0]):
        # constant integrand: exact
        return McEstimate(float(values[0]), 0.0, n)
    return McEstimate(float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(n)), n)


def _chunked(
    draw: Callable[[int, RandomStream], np.ndarray],
    s: int,
    rng: RandomStream,
    chunk_size: int,
    workers: int
) -> np.ndarray:
    """Evaluate ``draw(size, stream)`` over deterministic chunks in order."""
    if s < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {s}")
    if chunk_size < 1 or workers < 1:
        raise ValueError("chunk_size and workers must be positive")

    sizes = [chunk_size] * (s // chunk_size)
    if s % chunk_size:
        sizes.append(s % chunk_size)
    streams = rng.split(len(sizes))

    if workers == 1 or len(sizes) == 1:
        parts = [draw(size, stream) for size, stream in zip(sizes, streams)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(draw, sizes, streams))
    return np.concatenate(parts)


def mc_expected_loglik(
    post: VmfParams,
    lik_kappa: float,
    target: np.ndarray,
    s: int,
    rng: RandomStream,
    sampler_kind: str = 'vmf',
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> McEstimate:
    """Estimate E_{mu ~ post}[log vMF(target; mu, lik_kappa)].

    Args:
        post: Posterior over the mean direction
        lik_kappa: Likelihood concentration
        target: Unit target direction
        s: Number of samples (>= 100)
        rng: Random stream
        sampler_kind: 'vmf' (exact) or 'ps' (Power Spherical surrogate)
        chunk_size: Samples per chunk
        workers: Worker threads

    Returns:
        McEstimate of the expected log-likelihood
    """
    if sampler_kind not in SAMPLER_KINDS:
        raise ValueError(f"Unknown sampler kind: {sampler_kind}")
    target = np.asarray(target, dtype=np.float64)
    log_z = float(log_norm_const(lik_kappa))

    if sampler_kind == 'vmf':
        def sampler(n, stream):
            return vmf_sample(post, n, stream)
    else:
        surrogate = surrogate_from_vmf(post)

        def sampler(n, stream):
            return ps_sample(surrogate, n, stream)

    def draw(n: int, stream: RandomStream) -> np.ndarray:
        return log_z + lik_kappa * (sampler(n, stream) @ target)

    return _estimate(_chunked(draw, s, rng, chunk_size, workers))


def mc_entropy(
    p: VmfParams,
    s: int,
    rng: RandomStream,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> McEstimate:
    """Estimate the entropy as -mean(log_pdf(p, x_s)), x_s ~ p."""
    def draw(n: int, stream: RandomStream) -> np.ndarray:
        return -log_pdf_batch(p, vmf_sample(p, n, stream))

    return _estimate(_chunked(draw, s, rng, chunk_size, workers))


def z_score(analytic: float, est: McEstimate) -> float:
    """|analytic - value| / std_error; exact comparison when std_error is 0."""
    diff = abs(analytic - est.value)
    if est.std_error == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / est.std_error


def target_with_dot(mu: np.ndarray, dot: float) -> np.ndarray:
    """A unit vector whose inner product with mu is ``dot``."""
    mu = np.asarray(mu, dtype=np.float64)
    helper = np.array([1.0, 0.0, 0.0]) if abs(mu[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    perp = helper - np.dot(helper, mu) * mu
    perp /= np.linalg.norm(perp)
    return dot * mu + math.sqrt(max(0.0, 1.0 - dot * dot)) * perp


def verify_grid(
    s: int,
    seed: int,
    kappa_posts: Sequence[float] = GRID_KAPPA_POST,
    kappa_liks: Sequence[float] = GRID_KAPPA_LIK,
    dots: Sequence[float] = GRID_DOT,
    z_threshold: float = 3.0,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> Dict:
    """Compare analytic and MC expected log-likelihoods over a grid.

    Each grid point gets its own sub-stream of ``RandomStream(seed)`` in grid
    order, so rows are reproducible individually.

    Returns:
        Dictionary with 'rows' (one dict per grid point), 'pass_fraction'
        and 'max_z'
    """
    grid = [(kp, kl, d) for kp in kappa_posts for kl in kappa_liks for d in dots]
    streams = RandomStream(seed).split(len(grid))
    tracker = ProgressTracker(len(grid), label='verify-mc')

    rows: List[Dict] = []
    for (kappa_post, kappa_lik, dot), stream in zip(grid, streams):
        post = VmfParams(Z_AXIS, kappa_post)
        target = target_with_dot(Z_AXIS, dot)
        analytic = expected_log_likelihood(post, kappa_lik, target)
        est = mc_expected_loglik(post, kappa_lik, target, s, stream,
                                 chunk_size=chunk_size, workers=workers)
        z = z_score(analytic, est)
        if z >= z_threshold:
            logger.warning(
                f"Grid point kappa_post={kappa_post}, kappa_lik={kappa_lik}, dot={dot}: z={z:.2f}"
            )
        rows.append({
            'kappa_post': kappa_post,
            'kappa_lik': kappa_lik,
            'dot': dot,
            'analytic': analytic,
            'mc_value': est.value,
            'std_error': est.std_error,
            'z': z,
        })
        tracker.step()

    tracker.finish()
    passed = sum(1 for r in rows if r['z'] < z_threshold)
    pass_fraction = passed / len(rows) if rows else 1.0
    logger.info(f"MC grid verification: {passed}/{len(rows)} points with z < {z_threshold}")
    return {
        'rows': rows,
        'pass_fraction': pass_fraction,
        'max_z': max((r['z'] for r in rows), default=0.0),
    }


def verify_entropy(
    s: int,
    seed: int,
    kappas: Sequence[float] = ENTROPY_KAPPAS,
    z_threshold: float = 3.0,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> List[Dict]:
    """Analytic-vs-MC entropy rows for a list of concentrations."""
    rows = []
    for kappa, stream in zip(kappas, RandomStream(seed).split(len(kappas))):
        p = VmfParams(Z_AXIS, kappa)
        analytic = entropy(p)
        est = mc_entropy(p, s, stream, chunk_size=chunk_size, workers=workers)
        z = z_score(analytic, est)
        rows.append({
            'kappa': kappa,
            'analytic': analytic,
            'mc_value': est.value,
            'std_error': est.std_error,
            'z': z,
            'passed': z < z_threshold,
        })
    return rows


def surrogate_bias(
    post: VmfParams,
    lik_kappa: float,
    target: np.ndarray,
    s: int,
    rng: Optional[RandomStream] = None,
) -> Dict:
    """Gap between the PS-surrogate MC estimate and the analytic value.

    Reported as data; the surrogate is an approximation of the vMF.
    """
    rng = rng or RandomStream(0)
    vmf_stream, ps_stream = rng.split(2)
    analytic = expected_log_likelihood(post, lik_kappa, target)
    vmf_est = mc_expected_loglik(post, lik_kappa, target, s, vmf_stream, 'vmf')
    ps_est = mc_expected_loglik(post, lik_kappa, target, s, ps_stream, 'ps')
    return {
        'analytic': analytic,
        'vmf_value': vmf_est.value,
        'vmf_std_error': vmf_est.std_error,
        'ps_value': ps_est.value,
        'ps_std_error': ps_est.std_error,
        'ps_bias': ps_est.value - analytic,
    }
