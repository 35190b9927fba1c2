import numpy as np

from epifocus.constants import ENTROPY_BINS
from epifocus.iqm.kinds import ImageQualityMetric, IqmKind


def entropy_iqm(slice_: np.ndarray, n_bins: int = ENTROPY_BINS) -> float:
    """Histogram entropy (nats) of the intensities between the 1st and 99th percentile."""
    if n_bins < 2:
        raise ValueError(f'entropy needs at least 2 bins, got {n_bins}')
    values = np.asarray(slice_, dtype=np.float64).ravel()
    if not np.all(np.isfinite(values)):
        raise ValueError('slice contains non-finite values')
    lo, hi = np.percentile(values, [1, 99])
    if hi <= lo:
        return 0.0
    scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    counts = np.bincount(np.minimum((scaled * n_bins).astype(np.int64), n_bins - 1), minlength=n_bins)
    p = counts[counts > 0] / values.size
    return float(-np.sum(p * np.log(p)))


class EntropyMetric(ImageQualityMetric):
    kind = IqmKind.ENTROPY

    def __init__(self, n_bins: int = ENTROPY_BINS):
        self.n_bins = n_bins

    def evaluate(self, slice_, motion=None) -> float:
        return entropy_iqm(slice_, self.n_bins)
