import numpy as np

from epifocus.errors import GeometryError
from epifocus.geometry import MotionTrajectory, Trajectory, check_markers, default_markers, rpe_between
from epifocus.iqm.kinds import ImageQualityMetric, IqmKind


class OracleRpeMetric(ImageQualityMetric):
    """Reprojection error of an estimate against the known motion; needs no reconstruction."""
    kind = IqmKind.ORACLE_RPE
    needs_slice = False

    def __init__(self, traj: Trajectory, true_motion: MotionTrajectory, markers: np.ndarray = None):
        if len(true_motion) != len(traj):
            raise GeometryError(f'true motion has {len(true_motion)} views, trajectory has {len(traj)}')
        self.traj = traj
        self.true_motion = true_motion
        self.markers = check_markers(default_markers() if markers is None else markers)

    def evaluate(self, slice_, motion: MotionTrajectory) -> float:
        return rpe_between(self.traj, motion, self.true_motion, self.markers)
