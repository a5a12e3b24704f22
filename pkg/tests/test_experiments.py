"""
Tests for the synthetic experiment harness
"""

import json
from dataclasses import replace

import numpy as np
import pytest
from unittest.mock import patch

from src.experiments import (
    DivergenceError,
    OptConfig,
    SynthConfig,
    fit,
    gen_dataset,
    load_dataset,
    report_to_dict,
    run_benchmark,
    save_dataset,
    split_dataset,
)
from src.sphere_core import RandomStream


@pytest.fixture
def mock_synth():
    """Small two-cluster dataset configuration."""
    return SynthConfig(
        cluster_count=2,
        points_per_cluster=60,
        true_kappas=(5.0, 200.0),
        feature_dim=4,
        seed=3,
    )


@pytest.fixture
def mock_opt():
    """Short training run."""
    return OptConfig(iterations=50, gmm_k=4, seed=1)


def test_gen_dataset_shapes(mock_synth):
    """Sizes, unit directions and OOD count."""
    ds = gen_dataset(mock_synth)
    assert len(ds) == 120
    assert ds.features.shape == (120, 4)
    assert np.allclose(np.linalg.norm(ds.x, axis=1), 1.0)
    assert int(ds.ood.sum()) == 24
    assert sorted(set(ds.cluster.tolist())) == [0, 1]
    assert ds.true_kappas.tolist() == [5.0, 200.0]


def test_gen_dataset_deterministic(mock_synth):
    """Same seed, same data."""
    a = gen_dataset(mock_synth)
    b = gen_dataset(mock_synth)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.ood, b.ood)


def test_gen_dataset_pinned_means():
    """Cluster means can be fixed."""
    cfg = SynthConfig(cluster_count=1, points_per_cluster=500, true_kappas=(1000.0,),
                      cluster_means=((0.0, 0.0, 1.0),), ood_fraction=0.0)
    ds = gen_dataset(cfg)
    assert np.allclose(ds.cluster_means[0], [0.0, 0.0, 1.0])
    assert float(np.mean(ds.x[:, 2])) > 0.99


def test_synth_config_validation():
    """Invalid configurations raise."""
    with pytest.raises(ValueError):
        SynthConfig(cluster_count=2, true_kappas=(1.0,))
    with pytest.raises(ValueError):
        SynthConfig(ood_fraction=1.0)
    with pytest.raises(ValueError):
        SynthConfig(true_kappas=(5.0, 20.0, 50.0, -1.0))
    with pytest.raises(ValueError):
        SynthConfig(ood_direction_kappa=0.0)
    with pytest.raises(ValueError):
        OptConfig(holdout_fraction=0.0)
    with pytest.raises(ValueError):
        OptConfig(iterations=0)


def test_split_sends_ood_to_holdout(mock_synth):
    """OOD points are never trained on."""
    ds = gen_dataset(mock_synth)
    train, test = split_dataset(ds, 0.3, RandomStream(0))
    assert not train.ood.any()
    assert int(test.ood.sum()) == int(ds.ood.sum())
    assert len(train) + len(test) == len(ds)
    assert len(train) == 96 - round(0.3 * 96)


def test_split_shuffles_holdout(mock_synth):
    """Held-out points are not grouped by cluster or OOD flag."""
    ds = gen_dataset(mock_synth)
    _, test = split_dataset(ds, 0.3, RandomStream(0))
    assert not np.array_equal(test.cluster, np.sort(test.cluster))
    assert not np.array_equal(test.ood, np.sort(test.ood))


def test_dataset_file_round_trip(tmp_path, mock_synth):
    """JSONL persistence keeps points and recovers cluster means."""
    ds = gen_dataset(mock_synth)
    path = str(tmp_path / 'data.jsonl')
    save_dataset(ds, path)

    with open(path) as f:
        first = json.loads(f.readline())
    assert set(first) == {'x', 'feature', 'cluster', 'ood'}

    loaded = load_dataset(path)
    assert np.allclose(loaded.x, ds.x)
    assert np.array_equal(loaded.ood, ds.ood)
    assert loaded.true_kappas is None
    assert float(loaded.cluster_means[1] @ ds.cluster_means[1]) > 0.99


def test_load_dataset_rejects_bad_records(tmp_path):
    """Missing fields raise ValueError."""
    path = tmp_path / 'bad.jsonl'
    path.write_text('{"x": [0, 0, 1]}\n')
    with pytest.raises(ValueError):
        load_dataset(str(path))


@pytest.mark.parametrize('kind', ['cosine', 'nll', 'bayesian'])
def test_fit_report_fields(mock_synth, mock_opt, kind):
    """Reports carry bounded metrics and a decreasing loss."""
    report = fit(gen_dataset(mock_synth), kind, mock_opt)
    assert report.loss_kind == kind
    assert 0.0 <= report.cosine_error <= 2.0
    assert report.ause_al >= 0.0 and report.ause_ep >= 0.0
    assert 0.0 <= report.ood_auroc <= 1.0
    assert report.kappa_post_min >= 1.0
    assert len(report.loss_trace) == 50
    assert report.final_loss <= report.initial_loss
    assert report.n_train + report.n_test == 120


def test_fit_deterministic(mock_synth, mock_opt):
    """Identical seeds give identical reports."""
    ds = gen_dataset(mock_synth)
    a = report_to_dict(fit(ds, 'bayesian', mock_opt))
    b = report_to_dict(fit(ds, 'bayesian', mock_opt))
    assert a == b


def test_fit_rejects_unknown_loss(mock_synth, mock_opt):
    """Unknown loss kind raises."""
    with pytest.raises(ValueError):
        fit(gen_dataset(mock_synth), 'hinge', mock_opt)


def test_fit_noiseless_cosine():
    """Near-deterministic directions are learned almost exactly."""
    cfg = SynthConfig(true_kappas=(1e4, 1e4, 1e4, 1e4), feature_noise_sigma=0.0, ood_fraction=0.0)
    report = fit(gen_dataset(cfg), 'cosine', OptConfig(gmm_k=4))
    assert report.cosine_error < 0.05
    assert report.ood_auroc is None


@pytest.mark.parametrize('kind', ['nll', 'bayesian'])
def test_fit_kappa_ranks_true_concentration(kind):
    """Learned kappa_c separates the clusters in true-concentration order.

    With two tied groups of held-out points the rank correlation tops out
    near 0.87.
    """
    cfg = SynthConfig(cluster_count=2, points_per_cluster=300, true_kappas=(5.0, 200.0), ood_fraction=0.0)
    report = fit(gen_dataset(cfg), kind, OptConfig(iterations=1000, gmm_k=4))
    assert report.kappa_rank_corr >= 0.8


def test_cosine_loss_has_no_kappa_ranking(mock_synth, mock_opt):
    """Constant kappa_c has no rank correlation."""
    report = fit(gen_dataset(mock_synth), 'cosine', mock_opt)
    assert report.kappa_rank_corr is None


@pytest.mark.parametrize('seed', [0, 1, 2, 3, 4])
def test_ood_evidence_separation(seed):
    """Shifted features receive less evidence."""
    ds = gen_dataset(SynthConfig(ood_shift=10.0, seed=seed))
    report = fit(ds, 'bayesian', OptConfig(iterations=20, seed=seed))
    assert report.ood_auroc >= 0.9


@pytest.mark.parametrize('seed', [0, 1, 2, 3, 4])
def test_no_shift_no_separation(seed):
    """Unshifted OOD flags are indistinguishable from ID.

    2200 held-out points put the AUROC standard deviation near 0.012.
    """
    ds = gen_dataset(SynthConfig(ood_shift=0.0, points_per_cluster=1250, seed=seed))
    report = fit(ds, 'bayesian', OptConfig(iterations=5, seed=seed))
    assert 0.45 <= report.ood_auroc <= 0.55


def test_on_iteration_callback(mock_synth, mock_opt):
    """The callback sees every iteration."""
    seen = []
    fit(gen_dataset(mock_synth), 'nll', mock_opt, on_iteration=lambda i, loss: seen.append(i))
    assert seen == list(range(50))


def test_fit_curves(mock_synth, mock_opt):
    """Curves are attached on request and dropped from the dict form."""
    report = fit(gen_dataset(mock_synth), 'bayesian', mock_opt, with_curves=True)
    assert len(report.curves['curve']) == 100
    assert 'curves' not in report_to_dict(report)
    assert 'loss_trace' not in report_to_dict(report, include_trace=False)


@patch('src.experiments.batch_loss_and_grad')
def test_fit_divergence(mock_loss, mock_synth, mock_opt):
    """A non-finite loss stops training."""
    mock_loss.return_value = (np.full(1, np.nan), np.zeros((1, 3)), np.zeros(1))
    with pytest.raises(DivergenceError) as exc_info:
        fit(gen_dataset(mock_synth), 'nll', mock_opt)
    assert exc_info.value.iteration == 0


def test_run_benchmark(mock_synth, mock_opt):
    """Benchmark summarizes each loss over seeds."""
    result = run_benchmark(mock_synth, ['cosine', 'bayesian'], seeds=[0, 1], opt=mock_opt)
    assert result['seeds'] == [0, 1]
    assert set(result['summary']) == {'cosine', 'bayesian'}
    assert len(result['reports']) == 2
    assert result['reports'][1][0]['seed'] == 1
    assert 'loss_trace' not in result['reports'][0][0]


def test_gen_dataset_ood_directions_spread():
    """OOD directions scatter around the cluster mean; ID ones stay tight."""
    cfg = SynthConfig(cluster_count=1, points_per_cluster=4000, true_kappas=(200.0,),
                      cluster_means=((0.0, 0.0, 1.0),), ood_fraction=0.5)
    ds = gen_dataset(cfg)
    assert float(np.mean(ds.x[~ds.ood, 2])) > 0.99
    # mean cosine of vMF(kappa=1) is coth(1) - 1 ~ 0.313
    assert float(np.mean(ds.x[ds.ood, 2])) == pytest.approx(0.313, abs=0.05)

    same = gen_dataset(replace(cfg, ood_direction_kappa=None))
    assert float(np.mean(same.x[same.ood, 2])) > 0.99


def test_benchmark_bayesian_beats_baselines():
    """Default benchmark: the Bayesian posterior mean is at least as accurate as
    the cosine predictor, and its epistemic ordering halves the random AUSE."""
    result = run_benchmark(SynthConfig(), ['cosine', 'bayesian'], seeds=(0, 1, 2, 3, 4), opt=OptConfig())
    cosine, bayesian = result['summary']['cosine'], result['summary']['bayesian']
    assert bayesian['cosine_error'] <= cosine['cosine_error']
    assert bayesian['ause_ep'] * 2.0 <= bayesian['random_ause']
