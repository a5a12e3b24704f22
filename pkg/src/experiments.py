"""
Synthetic Experiments

Desk-scale reproduction of the evaluation protocol on synthetic directional
data:
- Dataset generation (clustered features, vMF directions, shifted OOD features)
- Train/held-out split and JSONL persistence
- Linear predictor fit under the cosine, NLL or Bayesian loss
- Held-out report: cosine error, AUSC/AUSE for aleatoric and epistemic
  orderings, random-ordering AUSE, OOD evidence AUROC, loss trace
- Multi-seed benchmark
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit
from sklearn.preprocessing import StandardScaler

from src.evidence_gmm import fit_em, log_density_batch
from src.losses import LOSS_KINDS, batch_loss_and_grad
from src.metrics import (
    cosine_errors,
    ood_auroc,
    random_ordering_ause,
    rank_correlation,
    sparsification,
    sparsification_curves,
)
from src.natpn import PRIOR_KAPPA, CertaintyBudget, evidence_batch, scaled_log_density
from src.sphere_core import RandomStream, as_unit_vector, uniform_sphere_batch
from src.utils import ProgressTracker, append_jsonl, read_jsonl
from src.vmf import VmfParams, sample as vmf_sample


logger = logging.getLogger(__name__)

SCALING_NOTE = "AUSC/AUSE are trapezoidal areas over k = 1..100% scaled by 100"
INIT_SCALE = 0.1


class DivergenceError(RuntimeError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, iteration: int, loss: float):
        super().__init__(f"Training diverged at iteration {iteration} (loss={loss})")
        self.iteration = iteration
        self.loss = loss


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic dataset parameters.

    ``ood_shift`` is measured in units of ``feature_noise_sigma``.
    ``ood_direction_kappa`` is the concentration OOD directions are drawn with
    around their cluster mean; None keeps the cluster's own concentration.
    ``cluster_means`` optionally pins the cluster mean directions.
    """

    cluster_count: int = 4
    points_per_cluster: int = 100
    true_kappas: Tuple[float, ...] = (5.0, 20.0, 50.0, 200.0)
    feature_dim: int = 8
    feature_noise_sigma: float = 0.3
    cluster_spread: float = 4.0
    ood_fraction: float = 0.2
    ood_shift: float = 10.0
    ood_direction_kappa: Optional[float] = 1.0
    seed: int = 0
    cluster_means: Optional[Tuple[Tuple[float, float, float], ...]] = None

    def __post_init__(self):
        if self.cluster_count < 1 or self.points_per_cluster < 1:
            raise ValueError("cluster_count and points_per_cluster must be >= 1")
        if len(self.true_kappas) != self.cluster_count:
            raise ValueError(
                f"true_kappas has {len(self.true_kappas)} entries for {self.cluster_count} clusters"
            )
        if any(not k > 0 for k in self.true_kappas):
            raise ValueError("true_kappas must be positive")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.feature_noise_sigma < 0 or self.cluster_spread < 0:
            raise ValueError("feature_noise_sigma and cluster_spread must be non-negative")
        if not 0.0 <= self.ood_fraction < 1.0:
            raise ValueError(f"ood_fraction must lie in [0, 1), got {self.ood_fraction}")
        if self.ood_shift < 0:
            raise ValueError(f"ood_shift must be non-negative, got {self.ood_shift}")
        if self.ood_direction_kappa is not None and not self.ood_direction_kappa > 0:
            raise ValueError(f"ood_direction_kappa must be positive, got {self.ood_direction_kappa}")
        if self.cluster_means is not None and len(self.cluster_means) != self.cluster_count:
            raise ValueError("cluster_means must have one direction per cluster")


@dataclass(frozen=True)
class OptConfig:
    """Training and evidence settings of a fit."""

    step_size: float = 1e-2
    iterations: int = 2000
    holdout_fraction: float = 0.3
    gamma: float = 1e-3
    prior_kappa: float = PRIOR_KAPPA
    n_h: Optional[float] = None
    m_max: float = 1e6
    gmm_k: int = 20
    gmm_max_iters: int = 200
    gmm_tol: float = 1e-6
    density_normalization: str = 'raw'
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError(f"holdout_fraction must lie in (0, 1), got {self.holdout_fraction}")


@dataclass(eq=False)
class SyntheticDataset:
    """Points with direction x, feature z, cluster id and OOD flag."""

    x: np.ndarray
    features: np.ndarray
    cluster: np.ndarray
    ood: np.ndarray
    cluster_means: np.ndarray
    true_kappas: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.x)

    def subset(self, idx: np.ndarray) -> 'SyntheticDataset':
        return SyntheticDataset(
            self.x[idx], self.features[idx], self.cluster[idx], self.ood[idx],
            self.cluster_means, self.true_kappas,
        )


@dataclass
class FitReport:
    """Held-out evaluation of one fit."""

    loss_kind: str
    seed: int
    n_train: int
    n_test: int
    cosine_error: float
    ausc_al: float
    ause_al: float
    ausc_ep: float
    ause_ep: float
    random_ause: float
    ood_auroc: Optional[float]
    kappa_rank_corr: Optional[float]
    kappa_post_min: float
    evidence_clamped: int
    initial_loss: float
    final_loss: float
    loss_trace: List[float] = field(default_factory=list)
    orderings: Dict[str, str] = field(default_factory=lambda: {
        'aleatoric': '1/kappa_c',
        'epistemic': '1/(kappa0 + m)',
    })
    scaling: str = SCALING_NOTE
    curves: Optional[Dict[str, List[float]]] = None


def gen_dataset(cfg: SynthConfig) -> SyntheticDataset:
    """Generate a clustered directional dataset.

    Each cluster has a feature center (Gaussian with scale cluster_spread), a
    mean direction and a concentration. A fixed fraction of points is flagged
    OOD and its features are translated by ood_shift * sigma along one random
    unit axis shared by all OOD points. OOD directions are redrawn around the
    cluster mean with ood_direction_kappa, so they stray far from the mean
    an informed posterior settles on.

    Args:
        cfg: Dataset parameters

    Returns:
        SyntheticDataset
    """
    mean_stream, center_stream, point_stream, ood_stream = RandomStream(cfg.seed).split(4)

    if cfg.cluster_means is not None:
        means = np.array([as_unit_vector(m) for m in cfg.cluster_means])
    else:
        means = uniform_sphere_batch(mean_stream, cfg.cluster_count)
    centers = cfg.cluster_spread * center_stream.normal((cfg.cluster_count, cfg.feature_dim))

    xs, feats, clusters = [], [], []
    for c, stream in enumerate(point_stream.split(cfg.cluster_count)):
        n = cfg.points_per_cluster
        xs.append(vmf_sample(VmfParams(means[c], cfg.true_kappas[c]), n, stream))
        feats.append(centers[c] + cfg.feature_noise_sigma * stream.normal((n, cfg.feature_dim)))
        clusters.append(np.full(n, c))

    x = np.concatenate(xs)
    features = np.concatenate(feats)
    cluster = np.concatenate(clusters)

    n_total = len(x)
    n_ood = int(round(cfg.ood_fraction * n_total))
    ood = np.zeros(n_total, dtype=bool)
    ood[ood_stream.choice(n_total, n_ood, replace=False)] = True

    axis = ood_stream.normal(cfg.feature_dim)
    axis /= np.linalg.norm(axis)
    features[ood] += cfg.ood_shift * cfg.feature_noise_sigma * axis

    if cfg.ood_direction_kappa is not None:
        for c in range(cfg.cluster_count):
            idx = np.flatnonzero(ood & (cluster == c))
            if len(idx):
                x[idx] = vmf_sample(VmfParams(means[c], cfg.ood_direction_kappa), len(idx), ood_stream)

    logger.info(
        f"Generated dataset: {n_total} points, {cfg.cluster_count} clusters, "
        f"{n_ood} OOD (shift {cfg.ood_shift} sigma)"
    )
    return SyntheticDataset(x, features, cluster, ood, means, np.asarray(cfg.true_kappas, dtype=float))


def split_dataset(
    ds: SyntheticDataset,
    holdout_fraction: float,
    rng: RandomStream
) -> Tuple[SyntheticDataset, SyntheticDataset]:
    """Random train/held-out split; every OOD point goes to the held-out part.

    Training points keep dataset order; held-out points come shuffled.
    """
    id_idx = np.flatnonzero(~ds.ood)
    perm = id_idx[rng.permutation(len(id_idx))]
    n_test_id = int(round(holdout_fraction * len(id_idx)))
    train_idx = np.sort(perm[n_test_id:])
    held_out = np.concatenate([perm[:n_test_id], np.flatnonzero(ds.ood)])
    # held-out order is random
    test_idx = held_out[rng.permutation(len(held_out))]
    if len(train_idx) == 0:
        raise ValueError("split leaves no training points")
    return ds.subset(train_idx), ds.subset(test_idx)


def dataset_records(ds: SyntheticDataset) -> Iterator[Dict]:
    """One JSON-ready record per point."""
    return (
        {
            'x': ds.x[i].tolist(),
            'feature': ds.features[i].tolist(),
            'cluster': int(ds.cluster[i]),
            'ood': bool(ds.ood[i]),
        }
        for i in range(len(ds))
    )


def save_dataset(ds: SyntheticDataset, filepath: str) -> None:
    """Append the dataset as JSONL, one point per line."""
    append_jsonl(filepath, dataset_records(ds))


def load_dataset(filepath: str) -> SyntheticDataset:
    """Read a JSONL dataset.

    The file carries no cluster parameters; cluster mean directions are
    recovered as the normalized resultant of each cluster's ID directions and
    true concentrations are unknown.

    Raises:
        ValueError: On missing fields or inconsistent feature dimensions
    """
    records = read_jsonl(filepath)
    if not records:
        raise ValueError(f"{filepath}: dataset is empty")
    try:
        x = np.array([r['x'] for r in records], dtype=np.float64)
        features = np.array([r['feature'] for r in records], dtype=np.float64)
        cluster = np.array([int(r['cluster']) for r in records])
        ood = np.array([bool(r['ood']) for r in records])
    except (KeyError, TypeError) as e:
        raise ValueError(f"{filepath}: malformed dataset record ({e})") from e
    if x.ndim != 2 or x.shape[1] != 3 or features.ndim != 2:
        raise ValueError(f"{filepath}: inconsistent vector dimensions")

    means = []
    for c in range(int(cluster.max()) + 1):
        mask = (cluster == c) & ~ood
        if not mask.any():
            mask = cluster == c
        resultant = x[mask].sum(axis=0) if mask.any() else np.array([0.0, 0.0, 1.0])
        means.append(resultant / np.linalg.norm(resultant))
    return SyntheticDataset(x, features, cluster, ood, np.array(means))


def _softplus(pre: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, pre)


def _design(scaler: StandardScaler, features: np.ndarray) -> np.ndarray:
    scaled = scaler.transform(features)
    return np.hstack([scaled, np.ones((len(scaled), 1))])


def _evidence(model, scaler, features, opt: OptConfig, n_h: float) -> Tuple[np.ndarray, np.ndarray]:
    scaled = scaler.transform(features)
    log_d = scaled_log_density(log_density_batch(model, scaled), scaled.shape[1],
                               opt.density_normalization)
    return evidence_batch(log_d, CertaintyBudget(n_h), opt.m_max)


def fit(
    dataset: SyntheticDataset,
    loss_kind: str,
    opt: OptConfig = OptConfig(),
    on_iteration: Optional[Callable[[int, float], None]] = None,
    with_curves: bool = False,
) -> FitReport:
    """Train a linear predictor and evaluate it on a held-out split.

    Features are standardized; the predictor maps them (plus a bias) to a raw
    3-vector, normalized into mu_c, and to kappa_c through a softplus. A GMM
    fit to the training features provides evidence for every loss kind; the
    Bayesian loss uses it with the cluster-mean prior.

    Args:
        dataset: Full dataset (split internally)
        loss_kind: 'cosine', 'nll' or 'bayesian'
        opt: Training settings
        on_iteration: Optional callback receiving (iteration, loss)
        with_curves: Attach the epistemic sparsification curves

    Returns:
        FitReport on the held-out split

    Raises:
        DivergenceError: If the loss becomes non-finite
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"Unknown loss kind: {loss_kind}")

    split_stream, init_stream, gmm_stream, random_stream = RandomStream(opt.seed).split(4)
    train, test = split_dataset(dataset, opt.holdout_fraction, split_stream)

    scaler = StandardScaler().fit(train.features)
    x_train = _design(scaler, train.features)
    x_test = _design(scaler, test.features)

    gmm = fit_em(scaler.transform(train.features), k=min(opt.gmm_k, len(train)),
                 max_iters=opt.gmm_max_iters, tol=opt.gmm_tol, rng=gmm_stream)
    n_h = float(opt.n_h) if opt.n_h is not None else float(len(train))
    m_train, _ = _evidence(gmm, scaler, train.features, opt, n_h)
    m_test, clamped_test = _evidence(gmm, scaler, test.features, opt, n_h)

    prior_train = dataset.cluster_means[train.cluster]
    prior_test = dataset.cluster_means[test.cluster]

    n, width = x_train.shape
    w_mu = INIT_SCALE * init_stream.normal((width, 3))
    w_kappa = np.zeros(width)

    logger.info(f"Fitting {loss_kind} predictor: n_train={n}, n_test={len(test)}, "
                f"iterations={opt.iterations}, step={opt.step_size}")

    def evaluate(w_mu, w_kappa):
        pre = x_train @ w_kappa
        losses, d_raw, d_kappa = batch_loss_and_grad(
            loss_kind, x_train @ w_mu, _softplus(pre), train.x,
            prior_mu=prior_train, prior_kappa=opt.prior_kappa,
            evidence=m_train, gamma=opt.gamma,
        )
        return float(np.mean(losses)), d_raw, d_kappa * expit(pre)

    trace: List[float] = []
    for iteration in range(opt.iterations):
        loss, d_raw, d_pre = evaluate(w_mu, w_kappa)
        if not math.isfinite(loss):
            raise DivergenceError(iteration, loss)
        trace.append(loss)
        if on_iteration is not None:
            on_iteration(iteration, loss)
        if iteration % 200 == 0:
            logger.debug(f"[{loss_kind}] iteration {iteration}: loss={loss:.6f}")

        w_mu = w_mu - opt.step_size * (x_train.T @ d_raw) / n
        w_kappa = w_kappa - opt.step_size * (x_train.T @ d_pre) / n

    final_loss, _, _ = evaluate(w_mu, w_kappa)
    if not math.isfinite(final_loss):
        raise DivergenceError(opt.iterations, final_loss)

    # held-out evaluation
    raw = x_test @ w_mu
    mu_c = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    kappa_c = _softplus(x_test @ w_kappa)
    kappa_post = opt.prior_kappa + m_test

    if loss_kind == 'bayesian':
        v = opt.prior_kappa * prior_test + m_test[:, None] * mu_c
        pred = v / np.linalg.norm(v, axis=1, keepdims=True)
    else:
        pred = mu_c
    errors = cosine_errors(pred, test.x)

    with np.errstate(divide='ignore'):
        al_uncertainty = 1.0 / kappa_c
    ep_uncertainty = 1.0 / kappa_post
    ausc_al, ause_al = sparsification(errors, al_uncertainty)
    ausc_ep, ause_ep = sparsification(errors, ep_uncertainty)

    auroc = None
    if test.ood.any() and not test.ood.all():
        auroc = ood_auroc(m_test, test.ood)

    rank_corr = None
    if dataset.true_kappas is not None and len(np.unique(test.cluster)) > 1:
        rank_corr = rank_correlation(kappa_c, dataset.true_kappas[test.cluster])
        if not math.isfinite(rank_corr):
            # constant kappa_c (cosine loss) has no ranking
            rank_corr = None

    curves = None
    if with_curves:
        c = sparsification_curves(errors, ep_uncertainty)
        curves = {key: np.asarray(val).tolist() for key, val in c.items()}

    report = FitReport(
        loss_kind=loss_kind,
        seed=opt.seed,
        n_train=n,
        n_test=len(test),
        cosine_error=float(np.mean(errors)),
        ausc_al=ausc_al,
        ause_al=ause_al,
        ausc_ep=ausc_ep,
        ause_ep=ause_ep,
        random_ause=random_ordering_ause(errors, random_stream),
        ood_auroc=auroc,
        kappa_rank_corr=rank_corr,
        kappa_post_min=float(kappa_post.min()),
        evidence_clamped=int(clamped_test.sum()),
        initial_loss=trace[0],
        final_loss=final_loss,
        loss_trace=trace,
        curves=curves,
    )
    logger.info(
        f"[{loss_kind}] done: loss {trace[0]:.4f} -> {final_loss:.4f}, "
        f"cosine error {report.cosine_error:.4f}, AUSE EP {ause_ep:.3f}"
    )
    return report


def report_to_dict(report: FitReport, include_trace: bool = True) -> Dict:
    """JSON-ready report; the curves are dropped (written as CSV instead)."""
    data = asdict(report)
    data.pop('curves')
    if not include_trace:
        data.pop('loss_trace')
    return data


def _fit_seed(args) -> List[FitReport]:
    cfg, loss_kinds, opt, seed = args
    dataset = gen_dataset(replace(cfg, seed=seed))
    return [fit(dataset, kind, replace(opt, seed=seed)) for kind in loss_kinds]


def run_benchmark(
    cfg: SynthConfig,
    loss_kinds: Sequence[str] = LOSS_KINDS,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    opt: OptConfig = OptConfig(),
    workers: int = 1,
) -> Dict:
    """Fit every loss kind on every seed and average the held-out metrics.

    Seeds run in separate processes when ``workers > 1``; results are ordered
    by seed either way.

    Returns:
        Dictionary with per-loss summaries and per-seed reports
    """
    jobs = [(cfg, tuple(loss_kinds), opt, seed) for seed in seeds]
    tracker = ProgressTracker(len(jobs), label='benchmark')

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(_fit_seed, jobs))
    else:
        per_seed = []
        for job in jobs:
            per_seed.append(_fit_seed(job))
            tracker.step(f"seed {job[3]}")
    tracker.finish()

    summary = {}
    for i, kind in enumerate(loss_kinds):
        reports = [seed_reports[i] for seed_reports in per_seed]
        aurocs = [r.ood_auroc for r in reports if r.ood_auroc is not None]
        summary[kind] = {
            'cosine_error': float(np.mean([r.cosine_error for r in reports])),
            'ause_ep': float(np.mean([r.ause_ep for r in reports])),
            'random_ause': float(np.mean([r.random_ause for r in reports])),
            'ood_auroc': float(np.mean(aurocs)) if aurocs else None,
        }
        logger.info(f"Benchmark [{kind}]: {summary[kind]}")

    return {
        'seeds': list(seeds),
        'summary': summary,
        'reports': [[report_to_dict(r, include_trace=False) for r in rs] for rs in per_seed],
    }
