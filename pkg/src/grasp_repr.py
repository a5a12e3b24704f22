"""
Contact Grasp Representation

Geometry of contact grasps (contact c, baseline b, approach a, width w):
- Quantized approach bins perpendicular to the baseline over [0, pi)
- Soft bin targets and approach selection
- Hierarchical grasp sampling: baseline from the vMF posterior, approach
  from the bins given the baseline, width given both
- Gripper pose assembly, ground-truth matching and grasp ranking
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from src.sphere_core import DOWN, RandomStream, as_unit_vector, normalize, rotate_about_axis
from src.vmf import VmfParams, sample as vmf_sample


logger = logging.getLogger(__name__)

DEFAULT_T_BINS = 12
ORTHO_TOL = 1e-3
MATCH_RADIUS = 0.02
TOP_K = 10

ScoreFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
WidthFn = Callable[[np.ndarray, np.ndarray, np.ndarray], float]


@dataclass(frozen=True, eq=False)
class ContactGrasp:
    """Contact grasp with quality P(c) and total concentration kappa0'."""

    contact: np.ndarray
    baseline: np.ndarray
    approach: np.ndarray
    width: float
    quality: float = 1.0
    total_concentration: float = 0.0

    def __post_init__(self):
        if self.width < 0:
            raise ValueError(f"width must be non-negative, got {self.width}")
        if not 0.0 <= self.quality <= 1.0:
            raise ValueError(f"quality must lie in [0, 1], got {self.quality}")


@dataclass(frozen=True, eq=False)
class ApproachBins:
    """T candidate approach directions with their predicted scores."""

    baseline: np.ndarray
    directions: np.ndarray
    scores: np.ndarray

    @property
    def t_count(self) -> int:
        return len(self.directions)


def _bin_reference(baseline: np.ndarray) -> np.ndarray:
    """Zero-angle direction: world-down projected onto the plane normal to b."""
    if abs(float(np.dot(baseline, DOWN))) > 1.0 - 1e-9:
        ref = np.array([1.0, 0.0, 0.0])
    else:
        ref = DOWN
    return normalize(ref - np.dot(ref, baseline) * baseline)


def bin_directions(baseline: np.ndarray, t_count: int = DEFAULT_T_BINS) -> np.ndarray:
    """Approach directions at angles t*pi/T about the baseline.

    Args:
        baseline: Unit baseline vector b
        t_count: Number of bins T (>= 2)

    Returns:
        (T, 3) array of unit vectors orthogonal to b
    """
    if t_count < 2:
        raise ValueError(f"t_count must be >= 2, got {t_count}")
    baseline = as_unit_vector(baseline)
    ref = _bin_reference(baseline)
    return np.array([
        rotate_about_axis(ref, baseline, t * math.pi / t_count)
        for t in range(t_count)
    ])


def soft_bin_targets(true_approach: np.ndarray, bins: Sequence[np.ndarray]) -> np.ndarray:
    """Cosine similarity of the true approach with every bin direction."""
    bins = np.asarray(bins, dtype=np.float64).reshape(-1, 3)
    if len(bins) == 0:
        raise ValueError("bins must be non-empty")
    return np.clip(bins @ np.asarray(true_approach, dtype=np.float64), -1.0, 1.0)


def select_approach(bins: ApproachBins) -> np.ndarray:
    """Direction of the highest-scoring bin (lowest index on ties)."""
    if len(bins.scores) != bins.t_count:
        raise ValueError("bin scores are not populated")
    return bins.directions[int(np.argmax(bins.scores))]


def sample_grasp(
    contact: np.ndarray,
    posterior: VmfParams,
    t_count: int,
    score_fn: ScoreFn,
    width_fn: WidthFn,
    rng: RandomStream,
    deterministic: bool = False,
    quality: float = 1.0,
) -> ContactGrasp:
    """Draw a grasp following P(w|b,c) P(a|b,c) P(b|c).

    Args:
        contact: Contact point in meters
        posterior: Posterior over the baseline direction
        t_count: Number of approach bins
        score_fn: (contact, baseline, bin directions) -> bin scores
        width_fn: (contact, baseline, approach) -> width in meters
        rng: Random stream
        deterministic: Use the posterior mean instead of a sample
        quality: Grasp quality P(c)

    Returns:
        ContactGrasp recording the posterior concentration
    """
    contact = np.asarray(contact, dtype=np.float64)
    if deterministic:
        baseline = posterior.mu
    else:
        baseline = vmf_sample(posterior, 1, rng)[0]

    directions = bin_directions(baseline, t_count)
    scores = np.asarray(score_fn(contact, baseline, directions), dtype=np.float64)
    approach = select_approach(ApproachBins(baseline, directions, scores))
    width = float(width_fn(contact, baseline, approach))

    return ContactGrasp(
        contact=contact,
        baseline=baseline,
        approach=approach,
        width=width,
        quality=quality,
        total_concentration=posterior.kappa,
    )


def assemble_pose(g: ContactGrasp) -> np.ndarray:
    """4x4 gripper pose with rotation columns (b, a x b, a).

    The approach is re-orthogonalized against the baseline; translation is the
    midpoint between the fingers, c + (w/2) b.

    Raises:
        ValueError: If a and b are not orthogonal within 1e-3
    """
    b = normalize(g.baseline)
    a = np.asarray(g.approach, dtype=np.float64)
    if abs(float(np.dot(a, b))) > ORTHO_TOL:
        raise ValueError(f"approach is not orthogonal to baseline (a.b={np.dot(a, b):.3e})")
    a = normalize(a - np.dot(a, b) * b)

    pose = np.eye(4)
    pose[:3, 0] = b
    pose[:3, 1] = np.cross(a, b)
    pose[:3, 2] = a
    pose[:3, 3] = np.asarray(g.contact, dtype=np.float64) + 0.5 * g.width * b
    return pose


def finger_contacts(g: ContactGrasp) -> Tuple[np.ndarray, np.ndarray]:
    """The two implied finger positions c and c + w b."""
    c = np.asarray(g.contact, dtype=np.float64)
    return c, c + g.width * normalize(g.baseline)


def match_to_ground_truth(
    pred_contacts: np.ndarray,
    gt_contacts: np.ndarray,
    radius: float = MATCH_RADIUS
) -> Tuple[np.ndarray, np.ndarray]:
    """Match predicted contacts to their nearest ground-truth contact.

    Args:
        pred_contacts: (n, 3) predicted contact points
        gt_contacts: (m, 3) ground-truth contact points
        radius: Matching radius in meters

    Returns:
        Tuple of (matched ground-truth index or -1, quality label in {0, 1})
    """
    pred_contacts = np.atleast_2d(np.asarray(pred_contacts, dtype=np.float64))
    gt_contacts = np.atleast_2d(np.asarray(gt_contacts, dtype=np.float64))
    if len(gt_contacts) == 0:
        return np.full(len(pred_contacts), -1), np.zeros(len(pred_contacts), dtype=int)

    dist, idx = cKDTree(gt_contacts).query(pred_contacts)
    matched = dist <= radius
    logger.debug(f"Matched {int(matched.sum())}/{len(pred_contacts)} predictions within {radius} m")
    return np.where(matched, idx, -1), matched.astype(int)


def rank_grasps(
    grasps: Sequence[ContactGrasp],
    by: str = 'quality',
    descending: bool = True
) -> List[ContactGrasp]:
    """Sort grasps by quality P(c) or by total concentration kappa0'."""
    if by == 'quality':
        key = lambda g: g.quality
    elif by == 'uncertainty':
        key = lambda g: g.total_concentration
    else:
        raise ValueError(f"Unknown ranking key: {by}")
    return sorted(grasps, key=key, reverse=descending)


def select_for_execution(
    grasps: Sequence[ContactGrasp],
    rng: RandomStream,
    top_k: int = TOP_K,
    by: str = 'quality',
    descending: bool = True,
) -> ContactGrasp:
    """Pick uniformly at random among the top-k ranked grasps."""
    if not grasps:
        raise ValueError("no grasps to select from")
    ranked = rank_grasps(grasps, by=by, descending=descending)[:top_k]
    return ranked[int(rng.integers(0, len(ranked)))]


def grasp_to_dict(g: ContactGrasp) -> dict:
    return {
        'contact': np.asarray(g.contact, dtype=float).tolist(),
        'baseline': np.asarray(g.baseline, dtype=float).tolist(),
        'approach': np.asarray(g.approach, dtype=float).tolist(),
        'width': float(g.width),
        'quality': float(g.quality),
        'kappa_post': float(g.total_concentration),
    }


def grasp_from_dict(data: dict) -> ContactGrasp:
    return ContactGrasp(
        contact=np.asarray(data['contact'], dtype=np.float64),
        baseline=np.asarray(data['baseline'], dtype=np.float64),
        approach=np.asarray(data['approach'], dtype=np.float64),
        width=float(data['width']),
        quality=float(data['quality']),
        total_concentration=float(data['kappa_post']),
    )
