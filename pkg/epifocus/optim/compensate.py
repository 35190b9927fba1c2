"""Block-wise Nelder-Mead motion estimation over PCHIP node parameters."""
import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from epifocus.config import BlockSchedule, EccSettings, EstimationConfig, ObjectiveConfig
from epifocus.constants import ENTROPY_DEFAULT_RPE, LAMBDA_MAX, LAMBDA_MIN, PARAM_NAMES, ROTATION_PARAMS, \
    SIMPLEX_MIN_RPE, SIMPLEX_ROTATION_GAIN, SIMPLEX_TRANSLATION_GAIN
from epifocus.consistency import RadonLUT
from epifocus.errors import ConfigError, EpifocusError
from epifocus.geometry import MotionTrajectory, Trajectory
from epifocus.iqm.kinds import ImageQualityMetric, IqmKind
from epifocus.motion import MotionSpline, node_positions, param_mask
from epifocus.optim.nelder_mead import nelder_mead
from epifocus.optim.objective import Objective
from epifocus.phantom import ProjectionStack, Volume, VolumeGrid
from epifocus.recon import ReconMode, backproject, prepare_projections
from epifocus.utils.general import peak_memory_mb, sha256

logger = logging.getLogger('epifocus.optim')


def lambda_from_terms(iqm: float, ecc: float) -> float:
    """Weight that brings both terms to the same range at the start point."""
    if iqm == 0:
        logger.warning('image-quality term is zero at the start point, using lambda = 1')
        return 1.0
    floor = np.finfo(np.float64).eps * max(abs(iqm), 1.0)
    if ecc <= floor:
        logger.warning(f'consistency term {ecc:.3g} is at the floor, lambda clamps')
    return float(np.clip(abs(iqm) / max(ecc, floor), LAMBDA_MIN, LAMBDA_MAX))


def auto_lambda(objective: Objective, node_values: np.ndarray) -> float:
    iqm, ecc = objective.terms(node_values)
    lambda_ = lambda_from_terms(iqm, ecc)
    logger.info(f'lambda = {lambda_:.4g} (iqm {iqm:.4g}, ecc {ecc:.4g})')
    return lambda_


def initial_simplex_scale(rpe_hat: float) -> np.ndarray:
    """Per-parameter simplex steps (radians for rx, ry, rz; mm for tx, ty, tz) from the expected RPE."""
    scale = max(float(rpe_hat), SIMPLEX_MIN_RPE)
    return np.array([SIMPLEX_ROTATION_GAIN * scale / 100 if name in ROTATION_PARAMS
                     else SIMPLEX_TRANSLATION_GAIN * scale for name in PARAM_NAMES])


def node_blocks(n_nodes: int, block_size: int) -> List[List[int]]:
    """Non-overlapping runs of neighbouring nodes, left to right; node 0 is the reference pose."""
    free = list(range(1, n_nodes))
    return [free[i:i + block_size] for i in range(0, len(free), block_size)]


class RunReport(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    iqm_kind: IqmKind
    lambda_: float = Field(alias='lambda')
    schedule: BlockSchedule
    n_nodes: int
    node_views: List[int]
    active_params: List[str]
    simplex_steps: List[float]
    seeds: Dict[str, int] = {}
    initial: Dict[str, float]
    final: Dict[str, float]
    objective_trace: List[float]
    sweep_objectives: List[float] = []
    sweep_seconds: List[float] = []
    n_evaluations: int = 0
    converged: bool = False
    stack_sha256: str
    lut_sha256: Optional[str] = None
    peak_memory_mb: float = 0.0


@dataclass
class CompensationResult:
    motion: MotionTrajectory
    spline: MotionSpline
    volume: Volume
    report: RunReport


def _lut_digest(luts: Optional[RadonLUT]) -> Optional[str]:
    return None if luts is None else sha256(luts.values)


def compensate(stack: ProjectionStack, traj: Trajectory, metric: ImageQualityMetric, estimation: EstimationConfig,
               objective_config: ObjectiveConfig, grid: VolumeGrid, luts: Optional[RadonLUT] = None,
               ecc: EccSettings = None, seeds: Dict[str, int] = None,
               initial_values: Optional[np.ndarray] = None) -> CompensationResult:
    """Estimate the motion of one acquisition and reconstruct the full volume with it.

    Only the geometry changes; the measured stack and the LUTs are checked for bitwise
    integrity at the end of the run.
    """
    schedule = estimation.schedule
    stack_digest = sha256(stack.data)
    lut_digest = _lut_digest(luts)
    lambda_ = objective_config.lambda_
    if lambda_ is not None and lambda_ > 0 and luts is None:
        raise ConfigError('a positive regularization weight needs precomputed Radon LUTs')

    filtered = prepare_projections(stack, estimation.filter_method)
    node_views = node_positions(len(traj), estimation.n_nodes)
    values = np.zeros((estimation.n_nodes, len(PARAM_NAMES))) if initial_values is None \
        else np.array(initial_values, dtype=np.float64)
    objective = Objective(filtered, traj, metric, grid, node_views, luts, 0.0, ecc, estimation.spline_kind)
    if lambda_ is None:
        lambda_ = auto_lambda(objective, values) if luts is not None else 0.0
    objective.lambda_ = lambda_

    start = objective.evaluate(values)
    rpe_hat = ENTROPY_DEFAULT_RPE if metric.kind == IqmKind.ENTROPY else max(start.iqm, 0.0)
    steps = initial_simplex_scale(rpe_hat)
    active = param_mask(objective_config.active_params)
    logger.info(f'start objective {start.total:.6g} (iqm {start.iqm:.6g}, ecc {start.ecc:.6g}), '
                f'simplex steps {np.round(steps, 5).tolist()}')

    current = start.total
    trace = [current]
    sweep_objectives: List[float] = []
    sweep_seconds: List[float] = []
    converged = False
    blocks = node_blocks(estimation.n_nodes, schedule.block_size)
    for sweep in range(schedule.max_sweeps):
        started = time.perf_counter()
        sweep_start = current
        for block in blocks:
            free = np.zeros_like(values, dtype=bool)
            free[block] = active
            base = values.copy()

            def block_objective(x, base=base, free=free):
                trial = base.copy()
                trial[free] = x
                return objective(trial)

            result = nelder_mead(block_objective, values[free], np.broadcast_to(steps, values.shape)[free],
                                 tol=schedule.simplex_tol, max_evals=schedule.max_evals_per_block)
            if result.fun < current:
                values[free] = result.x
                current = result.fun
            trace.append(current)
            logger.debug(f'sweep {sweep + 1} nodes {block}: {result.fun:.6g} after {result.n_evals} evaluations')
        sweep_seconds.append(time.perf_counter() - started)
        sweep_objectives.append(current)
        decrease = (sweep_start - current) / max(abs(sweep_start), np.finfo(np.float64).tiny)
        logger.info(f'sweep {sweep + 1}/{schedule.max_sweeps}: objective {current:.6g} '
                    f'(relative decrease {decrease:.3g}, {sweep_seconds[-1]:.1f} s)')
        if sweep == 0 and current >= sweep_start:
            logger.warning('first sweep did not improve the objective')
        if decrease < schedule.epsilon:
            converged = True
            break

    spline = objective.spline(values)
    motion = objective.motion_from_nodes(values)
    final = objective.evaluate(values)
    volume = backproject(filtered, traj, motion, grid, ReconMode.FULL)

    if sha256(stack.data) != stack_digest:
        raise EpifocusError('projection stack changed during compensation')
    if _lut_digest(luts) != lut_digest:
        raise EpifocusError('Radon LUTs changed during compensation')

    report = RunReport(
        iqm_kind=metric.kind,
        lambda_=lambda_,
        schedule=schedule,
        n_nodes=estimation.n_nodes,
        node_views=node_views.tolist(),
        active_params=list(objective_config.active_params),
        simplex_steps=steps.tolist(),
        seeds=seeds or {},
        initial=start.as_dict(),
        final=final.as_dict(),
        objective_trace=trace,
        sweep_objectives=sweep_objectives,
        sweep_seconds=sweep_seconds,
        n_evaluations=objective.n_evals,
        converged=converged,
        stack_sha256=stack_digest,
        lut_sha256=lut_digest,
        peak_memory_mb=peak_memory_mb(),
    )
    return CompensationResult(motion, spline, volume, report)


def compensation_summary(report: RunReport) -> str:
    return (f'{report.iqm_kind.value}: objective {report.initial["total"]:.5g} -> {report.final["total"]:.5g} '
            f'in {len(report.sweep_objectives)} sweeps, {report.n_evaluations} evaluations')

