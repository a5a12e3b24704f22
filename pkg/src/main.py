"""
Directional Evidence Toolkit - Command Line Interface

Subcommands for sampling, density evaluation, posterior updates, loss
evaluation, Monte-Carlo verification, GMM fitting, approach bins and grasp
selection, synthetic experiments and sparsification reports.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 failed verification.
"""

import argparse
import json
import logging
import math
import os
import sys
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv

from src.config import (
    ConfigError,
    load_config,
    loss_config_from,
    loss_weights_from,
    opt_config_from,
    synth_config_from,
)
from src.evidence_gmm import fit_em, load_model, log_density_batch, save_model
from src.experiments import (
    dataset_records,
    fit,
    gen_dataset,
    load_dataset,
    report_to_dict,
    run_benchmark,
)
from src.grasp_repr import (
    bin_directions,
    grasp_from_dict,
    grasp_to_dict,
    match_to_ground_truth,
    rank_grasps,
    select_for_execution,
)
from src.losses import (
    LOSS_KINDS,
    LossParts,
    LossWeights,
    bayesian_loss,
    bce_loss,
    chamfer_extended,
    cosine_loss,
    l1_width_loss,
    nll_loss,
    soft_bin_loss,
    total_loss,
)
from src.mc_oracle import (
    BIAS_DOT,
    BIAS_KAPPA_LIK,
    BIAS_KAPPA_POST,
    surrogate_bias,
    target_with_dot,
    verify_entropy,
    verify_grid,
)
from src.metrics import sparsification, sparsification_curves
from src.natpn import CertaintyBudget, Evidence, evidence_batch, interpolation_norm, posterior_update
from src.power_spherical import PsParams, ps_log_pdf_batch, ps_sample
from src.sphere_core import RandomStream, Z_AXIS
from src.utils import (
    append_csv,
    append_jsonl,
    log_iteration,
    read_csv_columns,
    read_jsonl,
    setup_logging,
    write_csv_rows,
    write_json_file,
)
from src.vmf import VmfParams, conjugate_posterior, log_pdf_batch, sample as vmf_sample


logger = logging.getLogger(__name__)

SEED_ENV_VAR = 'DIRECTIONAL_EVIDENCE_SEED'
UNIT_WARN_TOL = 1e-6
LOSS_EVAL_COLUMNS = ['cosine', 'nll', 'bayesian', 'soft_bin', 'width', 'bce', 'chamfer', 'total']

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3


class UsageError(Exception):
    """Invalid command line."""


class VerificationFailed(Exception):
    """Monte-Carlo verification below the required pass fraction."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_vector(text: str, name: str = 'vector') -> np.ndarray:
    """Parse a comma-separated triple and normalize it.

    A warning is logged when the input norm deviates from 1 by more than 1e-6.
    """
    try:
        values = [float(v) for v in text.split(',')]
    except ValueError:
        raise UsageError(f"{name} must be three comma-separated numbers, got '{text}'")
    if len(values) != 3:
        raise UsageError(f"{name} must have three components, got {len(values)}")
    v = np.array(values)
    norm = float(np.linalg.norm(v))
    if not np.isfinite(norm) or norm == 0.0:
        raise UsageError(f"{name} must be a finite non-zero vector")
    if abs(norm - 1.0) > UNIT_WARN_TOL:
        logger.warning(f"{name} has norm {norm:.6g}; normalizing")
    return v / norm


def parse_seeds(text: str) -> List[int]:
    try:
        seeds = [int(s) for s in text.split(',') if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got '{text}'")
    if not seeds or any(s < 0 for s in seeds):
        raise UsageError("--seeds needs at least one non-negative seed")
    return seeds


def resolve_seed(args, config: Dict[str, Any], default: Optional[int] = None) -> int:
    """--seed, then the environment variable, then the config default."""
    if getattr(args, 'seed', None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got '{env}'")
    return config['mc']['seed'] if default is None else default


def emit_jsonl(path: Optional[str], records: Iterable[Dict[str, Any]]) -> None:
    if path is None:
        for record in records:
            sys.stdout.write(json.dumps(record) + '\n')
    else:
        append_jsonl(path, records)


def emit_csv(path: Optional[str], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    if path is None:
        write_csv_rows(sys.stdout, header, rows)
    else:
        append_csv(path, header, rows)


def emit_json(path: Optional[str], data: Dict[str, Any]) -> None:
    if path is None:
        sys.stdout.write(json.dumps(data, indent=2) + '\n')
    else:
        write_json_file(path, data)


def _read_vectors(path: str, key: str) -> np.ndarray:
    """Rows of a JSONL file, each a list or an object holding ``key``."""
    records = read_jsonl(path)
    if not records:
        raise ValueError(f"{path}: no records")
    try:
        rows = [r[key] if isinstance(r, dict) else r for r in records]
        return np.array(rows, dtype=np.float64)
    except KeyError as e:
        raise ValueError(f"{path}: record without '{key}' field") from e
    except (TypeError, ValueError) as e:
        raise ValueError(f"{path}: inconsistent '{key}' records ({e})") from e


def cmd_sample(args, config) -> int:
    rng = RandomStream(resolve_seed(args, config))
    mu = parse_vector(args.mu, '--mu')
    if args.family == 'vmf':
        xs = vmf_sample(VmfParams(mu, args.kappa), args.n, rng)
    else:
        xs = ps_sample(PsParams(mu, args.kappa), args.n, rng)
    emit_jsonl(args.output, ({'x': x.tolist()} for x in xs))
    return EXIT_OK


def cmd_logpdf(args, config) -> int:
    mu = parse_vector(args.mu, '--mu')
    xs = _read_vectors(args.input, 'x')
    if xs.ndim != 2 or xs.shape[1] != 3:
        raise ValueError(f"{args.input}: expected 3-vectors")
    norms = np.linalg.norm(xs, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_WARN_TOL):
        logger.warning("Some input vectors are not unit length; normalizing")
    xs = xs / norms[:, None]

    if args.family == 'vmf':
        values = log_pdf_batch(VmfParams(mu, args.kappa), xs)
    else:
        values = ps_log_pdf_batch(PsParams(mu, args.kappa), xs)
    emit_csv(args.output, ['x', 'y', 'z', 'log_pdf'],
             ([float(a), float(b), float(c), float(v)] for (a, b, c), v in zip(xs, values)))
    return EXIT_OK


def cmd_posterior(args, config) -> int:
    prior = VmfParams(parse_vector(args.prior_mu, '--prior-mu'), args.prior_kappa)
    obs = parse_vector(args.obs_mu, '--obs-mu')
    result = {'semantics': 'exact' if args.exact else 'pseudo_count'}
    if args.exact:
        post = conjugate_posterior(prior, args.evidence, [obs])
    else:
        ev = Evidence(args.evidence)
        post = posterior_update(prior, obs, ev)
        if ev.m > 0:
            result['pre_normalization_norm'] = interpolation_norm(prior, obs, ev)
    emit_json(args.output, {'mu': post.mu.tolist(), 'kappa': post.kappa, **result})
    return EXIT_OK


def _grasp_loss_parts(
    r: Dict[str, Any],
    baseline_loss: float,
    weights: LossWeights
) -> Dict[str, float]:
    """Grasp losses of one loss-eval record, keyed by column.

    A term is computed only when the record carries its inputs; absent terms
    enter the total as zero.
    """
    parts = {}
    if 'bin_scores' in r and 'true_approach' in r:
        scores = r['bin_scores']
        baseline = np.asarray(r.get('baseline', r['target']), dtype=np.float64)
        bins = bin_directions(baseline, len(scores))
        parts['soft_bin'] = soft_bin_loss(scores, np.asarray(r['true_approach'], dtype=np.float64), bins)
    if 'pred_width' in r and 'true_width' in r:
        parts['width'] = l1_width_loss(float(r['pred_width']), float(r['true_width']))
    if 'pred_success' in r and 'success' in r:
        parts['bce'] = bce_loss(float(r['pred_success']), int(r['success']))
    if 'pred_points' in r and 'true_points' in r:
        parts['chamfer'] = chamfer_extended(np.asarray(r['pred_points'], dtype=np.float64),
                                            np.asarray(r['true_points'], dtype=np.float64))
    parts['total'] = total_loss([LossParts(
        width=parts.get('width', 0.0),
        contact=parts.get('bce', 0.0),
        baseline=baseline_loss,
        approach=parts.get('soft_bin', 0.0),
        density=float(r.get('density_nll', 0.0)),
        reconstruction=parts.get('chamfer', 0.0),
    )], weights)
    return parts


def cmd_loss_eval(args, config) -> int:
    cfg = loss_config_from(config)
    weights = loss_weights_from(config)
    records = read_jsonl(args.input)
    rows = []
    for i, r in enumerate(records):
        try:
            pred = VmfParams(r['pred_mu'], r['lik_kappa'])
            target = np.asarray(r['target'], dtype=np.float64)
            prior = VmfParams(r.get('prior_mu', pred.mu), r.get('prior_kappa', 1.0))
            ev = Evidence(float(r.get('evidence', 0.0)))
            post = posterior_update(prior, pred.mu, ev)
            values = {
                'cosine': cosine_loss(pred.mu, target),
                'nll': nll_loss(pred, target),
                'bayesian': bayesian_loss(post, pred.kappa, target, cfg),
            }
            values.update(_grasp_loss_parts(r, values[args.baseline_loss], weights))
        except (KeyError, TypeError) as e:
            raise ValueError(f"{args.input}: record {i} is missing a field ({e})") from e
        # columns without inputs stay empty
        rows.append([i] + [values.get(col, '') for col in LOSS_EVAL_COLUMNS])
    emit_csv(args.output, ['index'] + LOSS_EVAL_COLUMNS, rows)
    return EXIT_OK


def cmd_verify_mc(args, config) -> int:
    mc = config['mc']
    samples = args.samples or mc['samples']
    seed = resolve_seed(args, config)
    workers = args.workers or mc['workers']
    result = verify_grid(
        samples,
        seed,
        z_threshold=mc['z_threshold'],
        chunk_size=mc['chunk_size'],
        workers=workers,
    )
    entropy_rows = verify_entropy(samples, seed, z_threshold=mc['z_threshold'],
                                  chunk_size=mc['chunk_size'], workers=workers)
    bias = surrogate_bias(VmfParams(Z_AXIS, BIAS_KAPPA_POST), BIAS_KAPPA_LIK,
                          target_with_dot(Z_AXIS, BIAS_DOT), samples, RandomStream(seed))

    header = ['kappa_post', 'kappa_lik', 'dot', 'analytic', 'mc_value', 'std_error', 'z']
    emit_csv(args.output, header, ([row[h] for h in header] for row in result['rows']))

    # grid points and entropy checks share one pass fraction
    checks = len(result['rows']) + len(entropy_rows)
    passed = result['pass_fraction'] * len(result['rows']) + sum(r['passed'] for r in entropy_rows)
    pass_fraction = passed / checks if checks else 1.0

    summary = {
        'pass_fraction': pass_fraction,
        'grid_pass_fraction': result['pass_fraction'],
        'required': mc['pass_fraction'],
        'max_z': result['max_z'],
        'samples': samples,
        'entropy': entropy_rows,
        'surrogate_bias': {'kappa_post': BIAS_KAPPA_POST, 'kappa_lik': BIAS_KAPPA_LIK,
                           'dot': BIAS_DOT, **bias},
    }
    sys.stderr.write(json.dumps(summary) + '\n')
    if pass_fraction < mc['pass_fraction']:
        raise VerificationFailed(
            f"only {pass_fraction:.2%} of checks within {mc['z_threshold']} SE"
        )
    return EXIT_OK


def cmd_gmm_fit(args, config) -> int:
    if args.output is None:
        raise UsageError("gmm-fit needs --output for the model file")
    features = _read_vectors(args.input, 'feature')
    ev = config['evidence']
    model = fit_em(
        features,
        k=args.k or ev['gmm_k'],
        max_iters=ev['gmm_max_iters'],
        tol=ev['gmm_tol'],
        rng=RandomStream(resolve_seed(args, config)),
    )
    save_model(model, args.output)
    return EXIT_OK


def cmd_gmm_density(args, config) -> int:
    model = load_model(args.model)
    features = _read_vectors(args.input, 'feature')
    log_d = log_density_batch(model, features)
    if args.n_h is not None:
        m, clamped = evidence_batch(log_d, CertaintyBudget(args.n_h), config['evidence']['m_max'])
        emit_csv(args.output, ['index', 'log_density', 'evidence', 'clamped'],
                 ([i, float(v), float(e), int(c)] for i, (v, e, c) in enumerate(zip(log_d, m, clamped))))
    else:
        emit_csv(args.output, ['index', 'log_density'],
                 ([i, float(v)] for i, v in enumerate(log_d)))
    return EXIT_OK


def cmd_approach_bins(args, config) -> int:
    baseline = parse_vector(args.baseline, '--baseline')
    t_count = args.t_bins or config['grasp']['t_bins']
    directions = bin_directions(baseline, t_count)
    emit_jsonl(args.output, (
        {'bin': t, 'angle': t * math.pi / t_count, 'approach': d.tolist()}
        for t, d in enumerate(directions)
    ))
    return EXIT_OK


def cmd_grasp_select(args, config) -> int:
    settings = config['grasp']
    try:
        grasps = [grasp_from_dict(r) for r in read_jsonl(args.input)]
    except (KeyError, TypeError) as e:
        raise ValueError(f"{args.input}: malformed grasp record ({e})") from e
    if not grasps:
        raise ValueError(f"{args.input}: no grasps")

    labels = {}
    if args.ground_truth:
        gt = _read_vectors(args.ground_truth, 'contact')
        _, matched = match_to_ground_truth(
            np.array([g.contact for g in grasps]), gt, settings['match_radius']
        )
        labels = {id(g): int(label) for g, label in zip(grasps, matched)}

    top_k = args.top_k or settings['top_k']
    descending = not args.ascending
    ranked = rank_grasps(grasps, by=args.by, descending=descending)[:top_k]
    chosen = select_for_execution(grasps, RandomStream(resolve_seed(args, config)),
                                  top_k=top_k, by=args.by, descending=descending)

    def record(g):
        data = grasp_to_dict(g)
        if labels:
            data['matched'] = labels[id(g)]
        return data

    emit_json(args.output, {
        'by': args.by,
        'ranked': [record(g) for g in ranked],
        'selected': record(chosen),
    })
    return EXIT_OK


def cmd_synth(args, config) -> int:
    overrides = {'seed': resolve_seed(args, config, default=config['synth']['seed'])}
    if args.ood_shift is not None:
        overrides['ood_shift'] = args.ood_shift
    dataset = gen_dataset(synth_config_from(config, **overrides))
    emit_jsonl(args.output, dataset_records(dataset))
    return EXIT_OK


def _write_curves(path: str, curves: Dict[str, Sequence[float]]) -> None:
    append_csv(path, ['k', 'curve', 'oracle_curve'],
               ([int(k), float(c), float(o)]
                for k, c, o in zip(curves['k'], curves['curve'], curves['oracle_curve'])))


def cmd_fit(args, config) -> int:
    kinds = list(LOSS_KINDS) if args.loss == 'all' else [args.loss]
    overrides = {}
    if args.iterations is not None:
        overrides['iterations'] = args.iterations

    if args.seeds:
        seeds = parse_seeds(args.seeds)
        result = run_benchmark(
            synth_config_from(config),
            loss_kinds=kinds,
            seeds=seeds,
            opt=opt_config_from(config, **overrides),
            workers=args.workers or 1,
        )
        emit_json(args.output, result)
        return EXIT_OK

    seed = resolve_seed(args, config, default=config['synth']['seed'])
    if args.input:
        dataset = load_dataset(args.input)
    else:
        dataset = gen_dataset(synth_config_from(config, seed=seed))
    opt = opt_config_from(config, seed=seed, **overrides)

    reports = []
    for kind in kinds:
        callback = None
        if args.trace:
            def callback(iteration, loss, kind=kind):
                log_iteration(args.trace, {'loss_kind': kind, 'iteration': iteration, 'loss': loss})
        report = fit(dataset, kind, opt, on_iteration=callback, with_curves=bool(args.curves))
        if args.curves:
            _write_curves(args.curves, report.curves)
        reports.append(report_to_dict(report))

    emit_json(args.output, reports[0] if len(reports) == 1 else {'reports': reports})
    return EXIT_OK


def cmd_sparsify(args, config) -> int:
    cols = read_csv_columns(args.input, [args.error_column, args.uncertainty_column])
    errors, uncertainties = cols[args.error_column], cols[args.uncertainty_column]
    ausc, ause = sparsification(errors, uncertainties)
    if args.curves:
        _write_curves(args.curves, sparsification_curves(errors, uncertainties))
    emit_json(args.output, {'ausc': ausc, 'ause': ause, 'n': len(errors)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='directional-evidence',
                     description='Directional evidence toolkit (3-D vMF)')
    parser.add_argument('--config', type=str, default=None,
                        help='Configuration file (.yaml nested, otherwise key = value)')
    parser.add_argument('--log-level', type=str,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='Logging level (overrides config)')
    parser.add_argument('--output', type=str, default=None,
                        help='Output file (default: standard output)')
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)
    sub.required = True

    p = sub.add_parser('sample', help='Draw unit vectors')
    p.add_argument('family', choices=['vmf', 'ps'])
    p.add_argument('--mu', required=True)
    p.add_argument('--kappa', type=float, required=True)
    p.add_argument('--n', type=int, default=1)
    p.add_argument('--seed', type=int)
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser('logpdf', help='Log density of JSONL unit vectors')
    p.add_argument('family', choices=['vmf', 'ps'])
    p.add_argument('--mu', required=True)
    p.add_argument('--kappa', type=float, required=True)
    p.add_argument('--input', required=True)
    p.set_defaults(handler=cmd_logpdf)

    p = sub.add_parser('posterior', help='Posterior update of the mean direction')
    p.add_argument('--prior-mu', required=True)
    p.add_argument('--prior-kappa', type=float, default=1.0)
    p.add_argument('--obs-mu', required=True)
    p.add_argument('--evidence', type=float, required=True)
    p.add_argument('--exact', action='store_true',
                   help='Exact conjugate posterior (kappa = |theta|)')
    p.set_defaults(handler=cmd_posterior)

    p = sub.add_parser('loss-eval', help='Evaluate losses on a JSONL batch')
    p.add_argument('--input', required=True)
    p.add_argument('--baseline-loss', choices=LOSS_KINDS, default='bayesian',
                   help='Direction loss weighted as the baseline term of the total')
    p.set_defaults(handler=cmd_loss_eval)

    p = sub.add_parser('verify-mc', help='Analytic vs Monte-Carlo grid verification')
    p.add_argument('--samples', type=int)
    p.add_argument('--seed', type=int)
    p.add_argument('--workers', type=int)
    p.set_defaults(handler=cmd_verify_mc)

    p = sub.add_parser('gmm-fit', help='Fit the evidence GMM')
    p.add_argument('--input', required=True)
    p.add_argument('--k', type=int)
    p.add_argument('--seed', type=int)
    p.set_defaults(handler=cmd_gmm_fit)

    p = sub.add_parser('gmm-density', help='Log density (and evidence) of features')
    p.add_argument('--model', required=True)
    p.add_argument('--input', required=True)
    p.add_argument('--n-h', type=float)
    p.set_defaults(handler=cmd_gmm_density)

    p = sub.add_parser('approach-bins', help='Quantized approach directions about a baseline')
    p.add_argument('--baseline', required=True)
    p.add_argument('--t-bins', type=int)
    p.set_defaults(handler=cmd_approach_bins)

    p = sub.add_parser('grasp-select', help='Rank grasps and pick one for execution')
    p.add_argument('--input', required=True, help='Grasp JSONL')
    p.add_argument('--ground-truth', help='JSONL of ground-truth contacts to label matches')
    p.add_argument('--by', choices=['quality', 'uncertainty'], default='quality')
    p.add_argument('--ascending', action='store_true')
    p.add_argument('--top-k', type=int)
    p.add_argument('--seed', type=int)
    p.set_defaults(handler=cmd_grasp_select)

    p = sub.add_parser('synth', help='Generate a synthetic dataset')
    p.add_argument('--seed', type=int)
    p.add_argument('--ood-shift', type=float)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser('fit', help='Fit and evaluate a predictor')
    p.add_argument('--input', help='Dataset JSONL (default: generate from config)')
    p.add_argument('--loss', choices=list(LOSS_KINDS) + ['all'], default='bayesian')
    p.add_argument('--seed', type=int)
    p.add_argument('--seeds', help='Comma-separated seeds for a benchmark run')
    p.add_argument('--workers', type=int)
    p.add_argument('--iterations', type=int)
    p.add_argument('--curves', help='Write epistemic sparsification curves CSV')
    p.add_argument('--trace', help='Append per-iteration losses as JSONL')
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser('sparsify', help='AUSC/AUSE from an errors/uncertainties CSV')
    p.add_argument('--input', required=True)
    p.add_argument('--error-column', default='error')
    p.add_argument('--uncertainty-column', default='uncertainty')
    p.add_argument('--curves')
    p.set_defaults(handler=cmd_sparsify)

    return parser


def _report_error(exc: BaseException) -> None:
    sys.stderr.write(json.dumps({'error': str(exc), 'type': type(exc).__name__}) + '\n')


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        config = load_config(args.config)
        if args.log_level:
            config['logging']['log_level'] = args.log_level
        setup_logging(config)
        return args.handler(args, config)
    except (UsageError, ConfigError) as e:
        _report_error(e)
        return EXIT_USAGE
    except VerificationFailed as e:
        _report_error(e)
        return EXIT_VERIFY
    except (ValueError, OSError, RuntimeError) as e:
        # json.JSONDecodeError is a ValueError
        logger.debug("Command failed", exc_info=True)
        _report_error(e)
        return EXIT_DATA


def main():
    """Main entry point."""
    load_dotenv()
    sys.exit(run())


if __name__ == '__main__':
    main()
