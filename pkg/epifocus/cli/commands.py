"""Pipeline stages; each reads its inputs from and writes its artifacts to an ``ExperimentStore``."""
import math
import time
from typing import Dict, List, Optional, Tuple

import numpy as np

from epifocus.config import ExperimentConfig, Method, ObjectiveConfig, RuntimeSettings, config_hash
from epifocus.consistency import RadonLUT, build_luts
from epifocus.errors import EpifocusError
from epifocus.geometry import MotionTrajectory, Trajectory, circular_trajectory
from epifocus.iqm import EntropyMetric, ImageQualityMetric, IqmKind, OracleRpeMetric, build_training_set, \
    configure_determinism, make_metric, regressor_train, save_model
from epifocus.metrics import evaluation_mask, fill_method_columns, metrics_row
from epifocus.motion import random_motion, sample_motion
from epifocus.optim import compensate, compensation_summary
from epifocus.phantom import Phantom, ProjectionStack, Volume, default_phantom, forward_project, load_phantom, \
    save_phantom, voxelize
from epifocus.recon import ReconMode, fdk
from epifocus.storage import ExperimentStore
from epifocus.utils.formats import METRICS_COLUMNS, TRAINING_LOG_COLUMNS, read_rawp, read_rawv, read_spline_csv, \
    write_pgm, write_rawl, write_rawp, write_rawv, write_spline_csv, write_table, write_trajectory_csv
from epifocus.utils.general import log

SEED_NAMES = ('motion', 'noise', 'training', 'torch')


def derive_seeds(seed: int) -> Dict[str, int]:
    """Independent stream seeds for the stages of one experiment."""
    state = np.random.SeedSequence(seed).generate_state(len(SEED_NAMES))
    return {name: int(value) for name, value in zip(SEED_NAMES, state)}


def open_store(config: ExperimentConfig, out_dir) -> ExperimentStore:
    store = ExperimentStore.create(out_dir, config_hash(config), config.seed, config.training.model_path)
    if not store.config_file.exists() or store.load_json(store.config_file) != _config_data(config):
        store.save_json(store.config_file, _config_data(config), 'config')
    return store


def _config_data(config: ExperimentConfig) -> dict:
    return config.model_dump(mode='json', by_alias=True)


def _phantom(config: ExperimentConfig, store: ExperimentStore) -> Phantom:
    if store.phantom_file.exists():
        return load_phantom(store.phantom_file)
    return load_phantom(config.phantom_path) if config.phantom_path else default_phantom()


def _amplitude(config: ExperimentConfig) -> Tuple[float, float]:
    return config.simulation.amplitude_mm, math.radians(config.simulation.amplitude_deg)


def _require(path, stage: str):
    if not path.exists():
        raise EpifocusError(f'{path} not found, run "{stage}" first')


def cmd_simulate(config: ExperimentConfig, store: ExperimentStore, settings: RuntimeSettings) -> dict:
    """Ground truth, motion-free and motion-corrupted acquisitions of the phantom."""
    seeds = derive_seeds(config.seed)
    phantom = load_phantom(config.phantom_path) if config.phantom_path else default_phantom()
    traj = circular_trajectory(config.geometry)
    sim = config.simulation
    spline = random_motion(seeds['motion'], _amplitude(config), sim.n_nodes, sim.family, len(traj))
    motion = sample_motion(spline, len(traj))

    log(f'simulating {len(traj)} views, {sim.family.value} motion up to '
        f'{sim.amplitude_mm} mm / {sim.amplitude_deg} deg')
    clean = forward_project(phantom, traj, MotionTrajectory.identity(len(traj)), sim.noise_sigma, seeds['noise'])
    corrupted = forward_project(phantom, traj, motion, sim.noise_sigma, seeds['noise'])
    truth = voxelize(phantom, config.grid.build())

    save_phantom(store.phantom_file, phantom)
    store.record(store.phantom_file, 'phantom')
    write_trajectory_csv(store.trajectory_file, traj)
    store.record(store.trajectory_file, 'trajectory')
    write_spline_csv(store.true_spline_file, spline)
    store.record(store.true_spline_file, 'motion')
    write_rawp(store.clean_stack_file, clean)
    store.record(store.clean_stack_file, 'projections')
    write_rawp(store.motion_stack_file, corrupted)
    store.record(store.motion_stack_file, 'projections')
    write_rawv(store.ground_truth_file, truth)
    store.record(store.ground_truth_file, 'volume')
    max_diff = float(np.max(np.abs(corrupted.data - clean.data)))
    log(f'simulation done, max projection change from motion {max_diff:.4g}')
    return {'seeds': seeds, 'max_projection_change': max_diff}


def cmd_train(config: ExperimentConfig, store: ExperimentStore, settings: RuntimeSettings) -> dict:
    """Simulated training set, regressor fit, RPEM model and per-epoch log."""
    seeds = derive_seeds(config.seed)
    training = config.training
    phantom = _phantom(config, store)
    traj = circular_trajectory(config.geometry)
    log(f'building {training.n_samples} training samples')
    samples = build_training_set(seeds['training'], training.n_samples, training.amplitude_range,
                                 phantom=phantom, traj=traj, grid=config.grid.build(), amplitude=_amplitude(config),
                                 families=training.families, n_nodes=config.simulation.n_nodes,
                                 slice_size=training.slice_size)
    configure_determinism(_deterministic(config, settings), seeds['torch'])
    result = regressor_train(samples, training.epochs, training.lr, seeds['torch'], training.batch_size,
                             training.val_fraction, training.optimizer)
    save_model(store.model_file, result.model)
    store.record(store.model_file, 'model')
    write_table(store.training_log_file, result.history.rows, TRAINING_LOG_COLUMNS)
    store.record(store.training_log_file, 'training_log')
    last = result.history.last
    log(f'training done: val mse {last["val_mse"]:.5g}, val r {last["val_pearson_r"]:.3f}')
    return last


def _deterministic(config: ExperimentConfig, settings: RuntimeSettings) -> bool:
    return config.deterministic if settings.deterministic is None else settings.deterministic


def method_setup(method: Method, config: ExperimentConfig, traj: Trajectory, true_motion: MotionTrajectory,
                 store: ExperimentStore) -> Tuple[ImageQualityMetric, ObjectiveConfig]:
    """Metric and objective settings of one compared method."""
    objective = config.objective
    method = Method(method)
    if method == Method.ENTROPY:
        return EntropyMetric(), objective.model_copy(update={'iqm_kind': IqmKind.ENTROPY, 'lambda_': 0.0})
    if method == Method.ORACLE:
        return OracleRpeMetric(traj, true_motion), objective.model_copy(update={'iqm_kind': IqmKind.ORACLE_RPE})
    metric = make_metric(objective.iqm_kind, traj, true_motion, store.model_file)
    if method == Method.NO_ECC:
        return metric, objective.model_copy(update={'lambda_': 0.0})
    return metric, objective


def _needs_luts(config: ExperimentConfig) -> bool:
    return any(method not in (Method.ENTROPY, Method.NO_ECC) for method in config.methods) \
        and (config.objective.lambda_ is None or config.objective.lambda_ > 0)


def _reconstruct(stack: ProjectionStack, traj: Trajectory, config: ExperimentConfig) -> Volume:
    return fdk(stack, traj, MotionTrajectory.identity(len(traj)), config.grid.build(), ReconMode.FULL,
               config.estimation.filter_method)


def cmd_compensate(config: ExperimentConfig, store: ExperimentStore, settings: RuntimeSettings) -> List[dict]:
    """Runs every configured method on the corrupted acquisition and writes the metrics table."""
    for path in (store.motion_stack_file, store.clean_stack_file, store.true_spline_file):
        _require(path, 'simulate')
    deterministic = _deterministic(config, settings)
    traj = circular_trajectory(config.geometry)
    stack = read_rawp(store.motion_stack_file, config.geometry)
    true_motion = sample_motion(read_spline_csv(store.true_spline_file), len(traj))
    grid = config.grid.build()

    write_rawv(store.reference_file, _reconstruct(read_rawp(store.clean_stack_file, config.geometry), traj, config))
    store.record(store.reference_file, 'volume')
    write_rawv(store.uncompensated_file, _reconstruct(stack, traj, config))
    store.record(store.uncompensated_file, 'volume')

    luts: Optional[RadonLUT] = None
    if _needs_luts(config):
        log('building Radon derivative lookup tables')
        luts = build_luts(stack, config.ecc.n_theta, config.ecc.n_s, config.ecc.cone_weight, config.ecc.smoothing_px)
        write_rawl(store.luts_file, luts)
        store.record(store.luts_file, 'luts')

    runtimes = {}
    for method in config.methods:
        metric, objective = method_setup(method, config, traj, true_motion, store)
        log(f'compensating with method {method.value} ({objective.iqm_kind.value})')
        started = time.perf_counter()
        result = compensate(stack, traj, metric, config.estimation, objective, grid,
                            luts if objective.lambda_ != 0 else None, config.ecc, seeds={'seed': config.seed})
        runtimes[method.value] = time.perf_counter() - started
        log(compensation_summary(result.report))

        write_rawv(store.compensated_file(method.value), result.volume)
        store.record(store.compensated_file(method.value), 'volume')
        write_spline_csv(store.spline_file(method.value), result.spline)
        store.record(store.spline_file(method.value), 'motion')
        report = result.report.model_dump(mode='json', by_alias=True)
        report.update({'method': method.value, 'config_hash': store.config_hash, 'seed': config.seed})
        if not deterministic:
            report['runtime_s'] = runtimes[method.value]
        store.save_json(store.report_file(method.value), report, 'report')
    return evaluate_experiment(config, store, None if deterministic else runtimes)


def evaluate_experiment(config: ExperimentConfig, store: ExperimentStore,
                        runtimes: Dict[str, float] = None) -> List[dict]:
    reference = read_rawv(store.reference_file)
    uncompensated = read_rawv(store.uncompensated_file)
    mask = evaluation_mask(_phantom(config, store), reference.grid, config.evaluation.mask_dilation)
    rows = []
    for method in config.methods:
        path = store.compensated_file(method.value)
        _require(path, 'compensate')
        iqm = method_iqm(method, config)
        rows.append(metrics_row(config.dataset, config.simulation.family.value, method.value, iqm, reference,
                                uncompensated, read_rawv(path), mask, config.evaluation.ssim_window,
                                (runtimes or {}).get(method.value), store.config_hash, config.seed))
    rows = fill_method_columns(rows)
    write_table(store.metrics_file, rows, METRICS_COLUMNS)
    store.record(store.metrics_file, 'metrics')
    for row in rows:
        suppression = row['artifact_suppression']
        log(f'{row["method"]}: artifact suppression '
            f'{"n/a" if suppression is None else f"{suppression:.1f}%"}, ssim {row["ssim"]:.4f} '
            f'(uncompensated {row["ssim_nocomp"]:.4f})')
    return rows


def method_iqm(method: Method, config: ExperimentConfig) -> str:
    if method == Method.ENTROPY:
        return IqmKind.ENTROPY.value
    if method == Method.ORACLE:
        return IqmKind.ORACLE_RPE.value
    return config.objective.iqm_kind.value


def write_images(config: ExperimentConfig, store: ExperimentStore):
    """Central slices and absolute difference images against the motion-free reconstruction."""
    evaluation = config.evaluation
    reference = read_rawv(store.reference_file).central_slice()
    slices = {
        'ground_truth': read_rawv(store.ground_truth_file).central_slice() if store.ground_truth_file.exists()
        else None,
        'reference': reference,
        'uncompensated': read_rawv(store.uncompensated_file).central_slice(),
    }
    for method in config.methods:
        slices[method.value] = read_rawv(store.compensated_file(method.value)).central_slice()
    for name, image in slices.items():
        if image is None:
            continue
        write_pgm(store.image_file(name), image, evaluation.bone_level, evaluation.bone_width)
        store.record(store.image_file(name), 'image')
        if name in ('ground_truth', 'reference'):
            continue
        difference = np.abs(image.astype(np.float64) - reference)
        write_pgm(store.image_file(f'{name}_difference'), difference, evaluation.difference_level,
                  evaluation.difference_width)
        store.record(store.image_file(f'{name}_difference'), 'image')


def cmd_evaluate(config: ExperimentConfig, store: ExperimentStore, settings: RuntimeSettings) -> List[dict]:
    for path in (store.reference_file, store.uncompensated_file):
        _require(path, 'compensate')
    rows = evaluate_experiment(config, store, _reported_runtimes(config, store, settings))
    write_images(config, store)
    return rows


def _reported_runtimes(config: ExperimentConfig, store: ExperimentStore,
                       settings: RuntimeSettings) -> Optional[Dict[str, float]]:
    if _deterministic(config, settings):
        return None
    runtimes = {}
    for method in config.methods:
        path = store.report_file(method.value)
        if path.exists():
            runtimes[method.value] = store.load_json(path).get('runtime_s')
    return runtimes


def cmd_all(config: ExperimentConfig, store: ExperimentStore, settings: RuntimeSettings) -> List[dict]:
    cmd_simulate(config, store, settings)
    if config.needs_regressor() and not store.model_file.exists():
        cmd_train(config, store, settings)
    cmd_compensate(config, store, settings)
    return cmd_evaluate(config, store, settings)


COMMANDS = {
    'simulate': cmd_simulate,
    'train': cmd_train,
    'compensate': cmd_compensate,
    'evaluate': cmd_evaluate,
    'all': cmd_all,
}
