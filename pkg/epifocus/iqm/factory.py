from pathlib import Path
from typing import Union

import numpy as np

from epifocus.errors import ConfigError
from epifocus.geometry import MotionTrajectory, Trajectory
from epifocus.iqm.entropy import EntropyMetric
from epifocus.iqm.kinds import ImageQualityMetric, IqmKind
from epifocus.iqm.oracle import OracleRpeMetric
from epifocus.iqm.regressor import RegressorMetric, load_model


def make_metric(kind: Union[IqmKind, str], traj: Trajectory = None, true_motion: MotionTrajectory = None,
                model_path: Union[str, Path] = None, markers: np.ndarray = None) -> ImageQualityMetric:
    kind = IqmKind(kind)
    if kind == IqmKind.ENTROPY:
        return EntropyMetric()
    if kind == IqmKind.ORACLE_RPE:
        if traj is None or true_motion is None:
            raise ConfigError('the oracle metric needs the trajectory and the true motion')
        return OracleRpeMetric(traj, true_motion, markers)
    if model_path is None or not Path(model_path).is_file():
        raise ConfigError(f'regressor model file not found: {model_path}')
    return RegressorMetric(load_model(model_path))
