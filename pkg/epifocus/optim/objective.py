import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from epifocus.config import EccSettings, ObjectiveConfig
from epifocus.consistency import RadonLUT, ecc_breakdown, empty_pairs_message, view_pairs
from epifocus.errors import ConfigError, OptimizerError
from epifocus.geometry import MotionTrajectory, Trajectory
from epifocus.iqm.kinds import ImageQualityMetric
from epifocus.motion import MotionSpline, SplineKind, sample_motion
from epifocus.phantom import ProjectionStack, VolumeGrid
from epifocus.recon import FilteredProjections, ReconMode, backproject, prepare_projections

logger = logging.getLogger('epifocus.optim')


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    iqm: float
    ecc: float

    def as_dict(self) -> dict:
        return {'total': self.total, 'iqm': self.iqm, 'ecc': self.ecc}


class Objective:
    """IQM of the central slice reconstructed with the candidate motion plus the weighted ECC term.

    Candidates are PCHIP node values of shape (n_nodes, 6). The filtered projections and the
    Radon LUTs are computed once from the measured data and only read here.
    """

    def __init__(self, filtered: FilteredProjections, traj: Trajectory, metric: ImageQualityMetric,
                 grid: VolumeGrid, node_views: Sequence[int], luts: Optional[RadonLUT] = None,
                 lambda_: float = 0.0, ecc: EccSettings = None, spline_kind: SplineKind = SplineKind.PCHIP):
        if lambda_ < 0:
            raise ConfigError(f'regularization weight must be non-negative, got {lambda_}')
        if luts is not None and len(luts) != len(traj):
            raise ConfigError(f'{len(luts)} LUT entries for {len(traj)} views')
        self.filtered = filtered
        self.traj = traj
        self.metric = metric
        self.grid = grid
        self.node_views = np.asarray(node_views, dtype=np.int64)
        self.luts = luts
        self.lambda_ = float(lambda_)
        self.ecc = ecc or EccSettings()
        self.spline_kind = SplineKind(spline_kind)
        geometry = traj.geometry
        self.pairs = view_pairs(len(traj), geometry.angular_step, geometry.is_full_scan, self.ecc.pair_stride,
                                math.radians(self.ecc.max_separation_deg))
        self.n_evals = 0
        self._empty_pairs_reported = False

    def spline(self, node_values: np.ndarray) -> MotionSpline:
        return MotionSpline(self.spline_kind, self.node_views, np.asarray(node_values, dtype=np.float64))

    def motion_from_nodes(self, node_values: np.ndarray) -> MotionTrajectory:
        return sample_motion(self.spline(node_values), len(self.traj))

    def central_slice(self, motion: MotionTrajectory) -> np.ndarray:
        return backproject(self.filtered, self.traj, motion, self.grid, ReconMode.CENTRAL_SLICE).central_slice()

    def iqm_term(self, motion: MotionTrajectory) -> float:
        slice_ = self.central_slice(motion) if self.metric.needs_slice else None
        return float(self.metric(slice_, motion))

    def ecc_term(self, motion: MotionTrajectory) -> float:
        if self.luts is None:
            raise ConfigError('the consistency term needs precomputed Radon LUTs')
        breakdown = ecc_breakdown(self.traj, motion, self.luts, n_kappa=self.ecc.n_kappa, pairs=self.pairs)
        if breakdown.n_empty and not self._empty_pairs_reported:
            logger.warning(empty_pairs_message(breakdown))
            self._empty_pairs_reported = True
        return breakdown.total

    def terms(self, node_values: np.ndarray) -> Tuple[float, float]:
        """Both objective terms regardless of the weight; ECC is 0 without LUTs."""
        motion = self.motion_from_nodes(node_values)
        iqm = self.iqm_term(motion)
        ecc = self.ecc_term(motion) if self.luts is not None else 0.0
        return iqm, ecc

    def evaluate(self, node_values: np.ndarray) -> ObjectiveValue:
        node_values = np.asarray(node_values, dtype=np.float64)
        if not np.all(np.isfinite(node_values)):
            raise OptimizerError('non-finite node parameters', point=node_values.copy())
        motion = self.motion_from_nodes(node_values)
        iqm = self.iqm_term(motion)
        ecc = self.ecc_term(motion) if self.lambda_ > 0 else 0.0
        total = iqm + self.lambda_ * ecc
        self.n_evals += 1
        if math.isnan(total):
            raise OptimizerError(f'objective is NaN (iqm {iqm}, ecc {ecc})', point=node_values.copy())
        return ObjectiveValue(total, iqm, ecc)

    def __call__(self, node_values: np.ndarray) -> float:
        return self.evaluate(node_values).total


def objective(node_values: np.ndarray, config: ObjectiveConfig, stack: ProjectionStack, traj: Trajectory,
              metric: ImageQualityMetric, grid: VolumeGrid, node_views: Sequence[int],
              luts: Optional[RadonLUT] = None, ecc: EccSettings = None) -> float:
    """One-shot evaluation; the optimizer keeps an ``Objective`` to reuse the filtered projections."""
    lambda_ = config.lambda_ if config.lambda_ is not None else 0.0
    return Objective(prepare_projections(stack), traj, metric, grid, node_views, luts, lambda_, ecc)(node_values)
