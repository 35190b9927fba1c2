from enum import Enum

import numpy as np

from epifocus.geometry import MotionTrajectory


class IqmKind(str, Enum):
    ENTROPY = 'entropy'
    ORACLE_RPE = 'oracle_rpe'
    REGRESSOR = 'regressor'


class ImageQualityMetric:
    """Scores a motion estimate; lower is better."""
    kind: IqmKind
    needs_slice = True

    def evaluate(self, slice_: np.ndarray, motion: MotionTrajectory) -> float:
        raise NotImplementedError()

    def __call__(self, slice_: np.ndarray, motion: MotionTrajectory) -> float:
        return self.evaluate(slice_, motion)
