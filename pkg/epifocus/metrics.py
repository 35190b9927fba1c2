import math
from typing import List, Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from epifocus.errors import ShapeMismatchError, UndefinedBaselineError
from epifocus.phantom import Phantom, Volume, VolumeGrid, support_mask

Image = Union[np.ndarray, Volume]

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _values(image: Image) -> np.ndarray:
    if isinstance(image, Volume):
        image = image.values
    return np.asarray(image, dtype=np.float64)


def _check_shapes(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeMismatchError(f'shapes differ: {a.shape} vs {b.shape}')


def evaluation_mask(phantom: Phantom, grid: VolumeGrid, dilation: int = 5) -> np.ndarray:
    """Phantom support grown by ``dilation`` voxels."""
    support = support_mask(phantom, grid)
    if dilation <= 0:
        return support
    return ndimage.binary_dilation(support, iterations=dilation)


def rmse(a: Image, b: Image, mask: Optional[np.ndarray] = None) -> float:
    a, b = _values(a), _values(b)
    _check_shapes(a, b)
    diff = a - b
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        _check_shapes(a, mask)
        if not mask.any():
            raise ValueError('evaluation mask is empty')
        diff = diff[mask]
    return math.sqrt(float(np.mean(diff ** 2)))


def ssim(a: np.ndarray, b: np.ndarray, window: int = SSIM_WINDOW, k1: float = SSIM_K1, k2: float = SSIM_K2,
         data_range: float = None) -> float:
    """Mean SSIM over all ``window x window`` windows of two 2-D slices."""
    a, b = _values(a), _values(b)
    _check_shapes(a, b)
    if a.ndim != 2:
        raise ShapeMismatchError(f'ssim expects 2-D slices, got {a.ndim} dimensions')
    if min(a.shape) < window:
        raise ShapeMismatchError(f'slice {a.shape} is smaller than the {window}x{window} window')
    if data_range is None:
        data_range = max(np.ptp(a), np.ptp(b)) or 1.0
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    wa = sliding_window_view(a, (window, window))
    wb = sliding_window_view(b, (window, window))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = wa.var(axis=(-2, -1))
    var_b = wb.var(axis=(-2, -1))
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    index = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(index.mean())


def artifact_suppression(rmse_uncomp: float, rmse_comp: float) -> float:
    """Percentage of the uncompensated RMSE removed by compensation; negative if it got worse."""
    if rmse_uncomp <= 0:
        raise UndefinedBaselineError('uncompensated RMSE is zero, artifact suppression is undefined')
    return 100.0 * (rmse_uncomp - rmse_comp) / rmse_uncomp


def metrics_row(dataset: str, family: str, method: str, iqm: str, reference: Volume, uncompensated: Volume,
                compensated: Volume, mask: np.ndarray, window: int = SSIM_WINDOW, runtime_s: float = None,
                config_hash: str = '', seed: int = None) -> dict:
    """One result row; SSIM on the central slices with the reference slice's dynamic range."""
    rmse_uncomp = rmse(uncompensated, reference, mask)
    rmse_comp = rmse(compensated, reference, mask)
    note = ''
    try:
        suppression = artifact_suppression(rmse_uncomp, rmse_comp)
    except UndefinedBaselineError:
        suppression = None
        note = 'no motion in the uncompensated reconstruction, artifact suppression undefined'
    ref_slice = reference.central_slice()
    data_range = float(np.ptp(ref_slice)) or 1.0
    return {
        'dataset': dataset,
        'family': family,
        'method': method,
        'iqm': iqm,
        'artifact_suppression': suppression,
        'ssim_nocomp': ssim(uncompensated.central_slice(), ref_slice, window, data_range=data_range),
        'ssim_entropy': None,
        'ssim_proposed': None,
        'ssim': ssim(compensated.central_slice(), ref_slice, window, data_range=data_range),
        'rmse': rmse_comp,
        'runtime_s': runtime_s,
        'config_hash': config_hash,
        'seed': seed,
        'note': note,
    }


def fill_method_columns(rows: List[dict]) -> List[dict]:
    """Copy the entropy and proposed SSIM into every row, as in a side-by-side results table."""
    by_method = {row['method']: row['ssim'] for row in rows}
    for row in rows:
        row['ssim_entropy'] = by_method.get('entropy')
        row['ssim_proposed'] = by_method.get('proposed')
    return rows
