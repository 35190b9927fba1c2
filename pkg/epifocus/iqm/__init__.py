from .kinds import IqmKind, ImageQualityMetric
from .entropy import entropy_iqm, EntropyMetric
from .oracle import OracleRpeMetric
from .regressor import RpeRegressor, RegressorMetric, regressor_infer, normalize_slice, resample_slice, \
    prepare_slice, save_model, load_model
from .training import TrainingSample, TrainingHistory, TrainingResult, build_training_set, regressor_train, \
    gradient_check, configure_determinism, pearson_r
from .factory import make_metric
