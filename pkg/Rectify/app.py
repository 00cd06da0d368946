# =============================
# Imports
# =============================
import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from config.settings import load_settings, validate_settings
from src.bench import CRITERIA, load_bench_manifest, run_bench, write_table
from src.errors import InputError, MatrixFormatError, NoSolution, NumericalFailure, RectifyError, ShapeMismatch
from src.evaluation import functional_error, match_weights
from src.hardness import (assignment_to_witness, brute_force_relusep, brute_force_sat, lift_witness,
                          read_dimacs, reduce_relusep_to_network, reduce_sat_to_relusep, verify_witness)
from src.initializers import TensorInitConfig
from src.model import NetworkWeights, NoiseModel, generate_instance, generate_weights, get_activation
from src.numerics import svd
from src.recover import (RecoveryConfig, RecoveryReport, fpt_exact_arbitrary_U, recover_exact,
                         recover_noisy, recover_orthonormal)
from src.robust import GuessGrid, SketchConfig, fpt_noisy_recover, recover_sparse, sketch_output
from src.storage import InstanceStore, read_matrix, write_matrix, write_metrics
from src.utils import SeedStream, setup_logging
from src.worstcase import exact_neural_net

logger = logging.getLogger('rectify')

ALGORITHMS = ('worstcase', 'exact', 'orthonormal-ica', 'noisy', 'fpt-u', 'fpt-noise', 'sparse')


# =============================
# Settings
# =============================
def effective_settings(args: argparse.Namespace) -> Dict:
    overrides = {
        'performance.threads': getattr(args, 'threads', None),
        'numerics.exact_tol': getattr(args, 'tol', None),
        'model.m': getattr(args, 'm', None),
        'model.k': getattr(args, 'k', None),
        'model.d': getattr(args, 'd', None),
        'model.n': getattr(args, 'n', None),
        'model.activation': getattr(args, 'activation', None),
        'model.noise': getattr(args, 'noise', None),
        'model.target_kappa': getattr(args, 'kappa', None),
    }
    if getattr(args, 'orthonormal_u', False):
        overrides['model.orthonormal_u'] = True
    if getattr(args, 'orthonormal_v', False):
        overrides['model.orthonormal_v'] = True
    if getattr(args, 'whiten', False):
        overrides['recover.whiten'] = True
    try:
        settings = load_settings(args.config, overrides)
    except OSError as e:
        raise MatrixFormatError(f"cannot read config file: {e}") from e
    except json.JSONDecodeError as e:
        raise MatrixFormatError(f"malformed config file {args.config}: {e}") from e
    problems = validate_settings(settings)
    if problems:
        raise InputError("invalid settings: " + "; ".join(problems))
    return settings


def root_stream(args: argparse.Namespace) -> SeedStream:
    return SeedStream(int(args.seed))


def check_seed(args: argparse.Namespace) -> None:
    seed = getattr(args, 'seed', None)
    if seed is not None and not 0 <= seed < 2 ** 64:
        raise InputError(f"--seed must lie in [0, 2^64), got {seed}")


# =============================
# Commands
# =============================
def cmd_gen(args: argparse.Namespace, settings: Dict) -> int:
    model = settings['model']
    stream = root_stream(args)
    f = get_activation(model['activation'])
    noise = NoiseModel.parse(model['noise'])
    weights = generate_weights(model['m'], model['k'], model['d'], model['target_kappa'],
                               stream.child('weights'), model['orthonormal_u'], model['orthonormal_v'])
    covariance = read_matrix(args.covariance) if args.covariance else None
    if covariance is not None and covariance.shape != (model['d'], model['d']):
        raise ShapeMismatch(f"covariance must be {model['d']}x{model['d']}, got {covariance.shape}")
    instance = generate_instance(weights, f, model['n'], noise, stream.child('instance'), covariance)
    store = InstanceStore(args.out, settings['storage']['manifest_name'], settings['storage']['matrix_suffix'])
    store.save_instance(instance, effective_config=settings)
    return 0


def _recovery_config(settings: Dict, **overrides) -> RecoveryConfig:
    return RecoveryConfig.from_settings(settings['recover'], **overrides)


def run_algorithm(algo: str, instance, settings: Dict, stream: SeedStream,
                  report: RecoveryReport, oracle: bool = False) -> NetworkWeights:
    a, x, f = instance.a, instance.x, instance.activation
    k = instance.weights.k
    rec, init, rob = settings['recover'], settings['init'], settings['robust']
    threads = settings['performance']['threads']
    init_cfg = TensorInitConfig.from_settings(init)
    whiten = bool(rec['whiten']) or instance.covariance is not None

    if algo == 'worstcase':
        wc = settings['worstcase']
        return exact_neural_net(a, x, k, wc['max_patterns'], wc['functional_tol'],
                                settings['numerics']['rank_tol'], settings['signpat']['max_subsets'],
                                threads, settings['numerics']['simplex_max_pivots'])
    if algo == 'exact':
        return recover_exact(a, x, k, _recovery_config(settings), stream, f, init_cfg,
                             rec['init_margin'], report=report, whiten=whiten)
    if algo == 'orthonormal-ica':
        return recover_orthonormal(a, x, k, _recovery_config(settings), stream, f, rec['init_margin'],
                                   init['ica_max_iter'], init['ica_tol'], init['ica_restarts'], report)
    if algo == 'noisy':
        return recover_noisy(a, x, k, _recovery_config(settings), stream, f, init_cfg, report=report,
                             whiten=whiten)
    if algo == 'fpt-u':
        return fpt_exact_arbitrary_U(a, x, k, rec['tol_match'], f, rec['ransac_trials'], stream)
    if algo == 'fpt-noise':
        cfg = SketchConfig(rob['sketch_rows'] or SketchConfig.default_rows(k), stream.child('sketch'),
                           rob['refine'], rob['refine_quantile'], rob['noise_guesses'])
        sketch, sa = sketch_output(a, cfg)
        if oracle:
            oracle_m = np.linalg.pinv(sketch @ instance.weights.u)
            kappa_guess = max(instance.weights.kappa_v(), 1.0)
        else:
            oracle_m, kappa_guess = None, 1.0
        # sigma_k(S A) / sqrt(n) stands in for sigma_min(S U)
        sigma_guess = max(float(svd(sa).singular_values[k - 1]) / np.sqrt(a.shape[1]), 1e-12)
        grid = GuessGrid(sigma_guess, kappa_guess, rob['eps'], GuessGrid.default_base(rob['eps'], k),
                         rob['max_exponent'], oracle_m=oracle_m, signs=rob['grid_signs'],
                         budget=rob['grid_budget'])
        return fpt_noisy_recover(a, x, k, grid, cfg, f, threads)
    if algo == 'sparse':
        sparse_cfg = _recovery_config(settings, zero_tol=rob['sparse_zero_tol'])
        return recover_sparse(a, x, k, sparse_cfg, stream, f,
                              TensorInitConfig.from_settings(init, order=rob['sparse_init_order']),
                              rpca_tol=rob['rpca_tol'], rpca_max_iters=rob['rpca_max_iters'],
                              rpca_rho=rob['rpca_rho'], init_margin=rec['init_margin'], report=report,
                              whiten=whiten)
    raise InputError(f"unknown algorithm '{algo}'")


def cmd_recover(args: argparse.Namespace, settings: Dict) -> int:
    storage = settings['storage']
    source = InstanceStore(args.instance, storage['manifest_name'], storage['matrix_suffix'])
    instance = source.load_instance()
    out = InstanceStore(args.out or args.instance, storage['manifest_name'], storage['matrix_suffix'])
    report = RecoveryReport()
    weights = run_algorithm(args.algo, instance, settings, root_stream(args).child(args.algo),
                            report, oracle=args.oracle)
    out.save_weights(weights)

    err, rel = functional_error(instance.a, weights, instance.x, instance.activation)
    metrics = {'algorithm': args.algo, 'functional_error': err, 'functional_rel': rel}
    metrics.update(report.to_metrics())
    os.makedirs(out.root, exist_ok=True)
    write_metrics(os.path.join(out.root, storage['report_name']), metrics)
    logger.info("recovered with %s: functional_rel %.3e", args.algo, rel)
    return 0


def cmd_eval(args: argparse.Namespace, settings: Dict) -> int:
    storage = settings['storage']
    store = InstanceStore(args.instance, storage['manifest_name'], storage['matrix_suffix'])
    instance = store.load_instance()
    got = InstanceStore(args.weights or args.instance, storage['manifest_name'],
                        storage['matrix_suffix']).load_weights()
    match = match_weights(got, instance.weights, instance.activation, x=instance.x,
                          sign_aware=args.sign_aware,
                          brute_force_max_k=settings['eval']['brute_force_max_k'])
    err, rel = functional_error(instance.a, got, instance.x, instance.activation)
    tol = settings['numerics']['exact_tol']
    metrics = match.to_metrics()
    metrics.update({'data_error': err, 'data_rel': rel,
                    'exact': max(match.u_error, match.v_error) <= tol})
    out_dir = args.out or (args.weights or args.instance)
    os.makedirs(out_dir, exist_ok=True)
    write_metrics(os.path.join(out_dir, storage['report_name']), metrics)
    return 0


def cmd_bench(args: argparse.Namespace, settings: Dict) -> int:
    criteria: List[str] = list(settings['bench']['default_criteria'])
    trials: Dict[str, int] = {}
    if args.manifest:
        criteria, trials = load_bench_manifest(args.manifest)
    if args.criteria is not None:
        criteria = [c for c in args.criteria.replace(',', ' ').split() if c]
        unknown = [c for c in criteria if c not in CRITERIA]
        if unknown:
            raise InputError(f"unknown criteria {unknown}")
    table = run_bench(criteria, root_stream(args), settings, trials, settings['performance']['threads'])
    write_table(table, args.out, settings['bench']['table_name'])
    return 0


def cmd_selftest(args: argparse.Namespace, settings: Dict) -> int:
    table = run_bench(settings['bench']['selftest_criteria'], root_stream(args), settings,
                      threads=settings['performance']['threads'], smoke=True)
    if args.out:
        write_table(table, args.out, settings['bench']['table_name'])
    print(table.drop(columns=['seconds']).to_string(index=False))
    return 0 if bool(table['passed'].all()) else 3


def _load_witness(path: str):
    w = read_matrix(path)
    if w.shape[0] != 2:
        raise MatrixFormatError(f"witness file must hold two rows (x and y), got {w.shape[0]}")
    return w[0], w[1]


def cmd_hardness(args: argparse.Namespace, settings: Dict) -> int:
    hard = settings['hardness']
    psi = read_dimacs(args.cnf)
    inst = reduce_sat_to_relusep(psi)

    if args.action == 'reduce':
        os.makedirs(args.out, exist_ok=True)
        alpha, x, a = reduce_relusep_to_network(inst, free_alpha=args.free_alpha)
        suffix = settings['storage']['matrix_suffix']
        for name, mat in (('P', inst.p_set), ('Q', inst.q_set), ('alpha', alpha), ('X', x), ('A', a)):
            write_matrix(os.path.join(args.out, name + suffix), mat)
        return 0

    if args.action == 'witness':
        assignment = brute_force_sat(psi)
        if assignment is None:
            raise NoSolution("formula is unsatisfiable; no witness exists")
        x, y = assignment_to_witness(assignment)
        if args.free_alpha:
            x, y = lift_witness(x, y)
        os.makedirs(args.out, exist_ok=True)
        write_matrix(os.path.join(args.out, 'witness' + settings['storage']['matrix_suffix']), np.vstack([x, y]))
        return 0

    if args.action == 'verify':
        x, y = _load_witness(args.witness)
        ok, violations = verify_witness(inst, x, y, args.tol if args.tol is not None else hard['witness_tol'])
        for line in violations:
            logger.error("violated %s", line)
        if not ok:
            raise NoSolution(f"witness violates {len(violations)} constraints")
        return 0

    if args.action == 'solve':
        found = brute_force_relusep(inst, hard['brute_force_budget'], hard['max_dim'])
        if found is None:
            raise NoSolution("no ReLU-separability witness exists")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            write_matrix(os.path.join(args.out, 'witness' + settings['storage']['matrix_suffix']),
                         np.vstack(found))
        return 0
    raise InputError(f"unknown hardness action '{args.action}'")


# =============================
# Argument parsing
# =============================
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=None, help='JSON file overlaying the default settings')
    common.add_argument('--threads', type=int, default=None)
    common.add_argument('--tol', type=float, default=None)

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument('--seed', type=int, required=True, help='root seed in [0, 2^64)')

    parser = argparse.ArgumentParser(prog='rectify', description='Recover two-layer rectified networks.')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen', parents=[common, seeded], help='generate a planted instance')
    gen.add_argument('--out', required=True)
    gen.add_argument('--m', type=int)
    gen.add_argument('--k', type=int)
    gen.add_argument('--d', type=int)
    gen.add_argument('--n', type=int)
    gen.add_argument('--activation')
    gen.add_argument('--noise')
    gen.add_argument('--kappa', type=float)
    gen.add_argument('--orthonormal-u', action='store_true')
    gen.add_argument('--orthonormal-v', action='store_true')
    gen.add_argument('--covariance', help='d x d matrix file; X is drawn from N(0, covariance)')

    rec = sub.add_parser('recover', parents=[common, seeded], help='recover weights from an instance')
    rec.add_argument('--instance', required=True)
    rec.add_argument('--algo', choices=ALGORITHMS, required=True)
    rec.add_argument('--out')
    rec.add_argument('--oracle', action='store_true', help='fpt-noise: use the planted U for the sketch inverse')
    rec.add_argument('--whiten', action='store_true', help='whiten X by its sample covariance before recovery')

    ev = sub.add_parser('eval', parents=[common], help='compare recovered weights with the planted ones')
    ev.add_argument('--instance', required=True)
    ev.add_argument('--weights')
    ev.add_argument('--out')
    ev.add_argument('--sign-aware', action='store_true')

    bench = sub.add_parser('bench', parents=[common, seeded], help='run acceptance criteria')
    bench.add_argument('--manifest')
    bench.add_argument('--criteria')
    bench.add_argument('--out', required=True)

    selftest = sub.add_parser('selftest', parents=[common, seeded], help='reduced smoke suite')
    selftest.add_argument('--out')

    hard = sub.add_parser('hardness', parents=[common], help='reduction tooling')
    hard.add_argument('action', choices=('reduce', 'witness', 'verify', 'solve'))
    hard.add_argument('--cnf', required=True)
    hard.add_argument('--out')
    hard.add_argument('--witness')
    hard.add_argument('--free-alpha', action='store_true')
    return parser


COMMANDS = {
    'gen': cmd_gen,
    'recover': cmd_recover,
    'eval': cmd_eval,
    'bench': cmd_bench,
    'selftest': cmd_selftest,
    'hardness': cmd_hardness,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        check_seed(args)
        settings = effective_settings(args)
        setup_logging(settings)
        if args.command == 'hardness':
            needs = {'reduce': 'out', 'witness': 'out', 'verify': 'witness'}.get(args.action)
            if needs and not getattr(args, needs):
                raise InputError(f"hardness {args.action} needs --{needs}")
        return COMMANDS[args.command](args, settings)
    except RectifyError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as e:
        logger.error("numerical failure in %s: %s: %s", args.command, type(e).__name__, e)
        return NumericalFailure.exit_code


if __name__ == '__main__':
    sys.exit(main())
