"""
Uncertainty Metrics

Evaluation metrics for uncertainty estimates:
- Sparsification curves with AUSC / AUSE (reported x100)
- Random-ordering AUSE baseline
- OOD detection AUROC from evidence
- Cosine error and rank correlation helpers
"""

import logging
import math
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import spearmanr
from sklearn.metrics import roc_auc_score

from src.sphere_core import RandomStream


logger = logging.getLogger(__name__)

MIN_POINTS = 10
CURVE_STEPS = 100
# AUSC/AUSE are reported on a x100 scale
AREA_SCALE = 100.0


def _check_pair(errors, uncertainties) -> Tuple[np.ndarray, np.ndarray]:
    errors = np.asarray(errors, dtype=np.float64).ravel()
    uncertainties = np.asarray(uncertainties, dtype=np.float64).ravel()
    if len(errors) != len(uncertainties):
        raise ValueError(
            f"errors ({len(errors)}) and uncertainties ({len(uncertainties)}) differ in length"
        )
    if len(errors) < MIN_POINTS:
        raise ValueError(f"sparsification needs at least {MIN_POINTS} points, got {len(errors)}")
    return errors, uncertainties


def _prefix_curve(sorted_errors: np.ndarray) -> np.ndarray:
    """Mean error of the first ceil(k*n/100) entries for k = 1..100."""
    n = len(sorted_errors)
    cumsum = np.cumsum(sorted_errors)
    counts = np.array([math.ceil(k * n / CURVE_STEPS) for k in range(1, CURVE_STEPS + 1)])
    return cumsum[counts - 1] / counts


def sparsification_curves(errors, uncertainties) -> Dict[str, np.ndarray]:
    """Uncertainty-ordered and oracle sparsification curves.

    Points are ranked by ascending uncertainty (most certain first; ties keep
    input order) and curve(k) is the mean error of the k% retained points.
    The oracle ranks by ascending true error.

    Args:
        errors: Per-point errors
        uncertainties: Per-point uncertainty scores

    Returns:
        Dictionary with 'k' (1..100), 'curve' and 'oracle_curve'
    """
    errors, uncertainties = _check_pair(errors, uncertainties)
    order = np.argsort(uncertainties, kind='stable')
    return {
        'k': np.arange(1, CURVE_STEPS + 1),
        'curve': _prefix_curve(errors[order]),
        'oracle_curve': _prefix_curve(np.sort(errors, kind='stable')),
    }


def _area(values: np.ndarray) -> float:
    return float(trapezoid(values, np.linspace(0.0, 1.0, CURVE_STEPS)) * AREA_SCALE)


def sparsification(errors, uncertainties) -> Tuple[float, float]:
    """AUSC and AUSE of an uncertainty ordering, both x100.

    Returns:
        Tuple of (ausc, ause)
    """
    curves = sparsification_curves(errors, uncertainties)
    ausc = _area(curves['curve'])
    ause = _area(np.abs(curves['curve'] - curves['oracle_curve']))
    return ausc, ause


def random_ordering_ause(errors, rng: RandomStream, repeats: int = 10) -> float:
    """Mean AUSE of uniformly random uncertainty orderings."""
    errors = np.asarray(errors, dtype=np.float64).ravel()
    values = [
        sparsification(errors, rng.permutation(len(errors)).astype(np.float64))[1]
        for _ in range(repeats)
    ]
    return float(np.mean(values))


def ood_auroc(evidences, is_ood) -> float:
    """AUROC of -evidence as an OOD score; ties get half credit.

    Raises:
        ValueError: If lengths differ or only one class is present
    """
    evidences = np.asarray(evidences, dtype=np.float64).ravel()
    is_ood = np.asarray(is_ood, dtype=bool).ravel()
    if len(evidences) != len(is_ood):
        raise ValueError(f"evidences ({len(evidences)}) and is_ood ({len(is_ood)}) differ in length")
    if is_ood.all() or not is_ood.any():
        raise ValueError("ood_auroc needs both ID and OOD samples")
    return float(roc_auc_score(is_ood, -evidences))


def cosine_errors(pred_mu: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row 1 - pred.target, clipped to [0, 2]."""
    dots = np.sum(np.asarray(pred_mu) * np.asarray(targets), axis=-1)
    return np.clip(1.0 - dots, 0.0, 2.0)


def rank_correlation(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman rank correlation."""
    rho, _ = spearmanr(a, b)
    return float(rho)
