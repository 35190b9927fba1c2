"""Compact convolutional regressor predicting the reprojection error from one axial slice."""
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from epifocus.constants import REGRESSOR_INPUT, REGRESSOR_WIDTHS
from epifocus.errors import FormatError, ShapeMismatchError
from epifocus.iqm.kinds import ImageQualityMetric, IqmKind
from epifocus.utils.formats import decode_rpem, encode_rpem


class RpeRegressor(nn.Module):
    """Stride-2 3x3 convolutions with SiLU, global average pooling, one affine output."""

    def __init__(self, widths: Sequence[int] = REGRESSOR_WIDTHS, input_size: int = REGRESSOR_INPUT):
        super().__init__()
        self.widths = tuple(int(w) for w in widths)
        self.input_size = int(input_size)
        layers = []
        channels = 1
        for width in self.widths:
            layers += [nn.Conv2d(channels, width, kernel_size=3, stride=2, padding=1), nn.SiLU()]
            channels = width
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(channels, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(torch.flatten(self.pool(self.features(x)), 1)).squeeze(-1)


def normalize_slice(slice_: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance; a constant slice maps to zeros."""
    slice_ = np.asarray(slice_, dtype=np.float64)
    std = slice_.std()
    if std == 0:
        return np.zeros_like(slice_, dtype=np.float32)
    return ((slice_ - slice_.mean()) / std).astype(np.float32)


def resample_slice(slice_: np.ndarray, size: int = REGRESSOR_INPUT) -> np.ndarray:
    slice_ = np.asarray(slice_, dtype=np.float32)
    if slice_.shape == (size, size):
        return slice_
    tensor = torch.from_numpy(np.ascontiguousarray(slice_))[None, None]
    return F.interpolate(tensor, size=(size, size), mode='area')[0, 0].numpy()


def prepare_slice(slice_: np.ndarray, size: int = REGRESSOR_INPUT) -> np.ndarray:
    return normalize_slice(resample_slice(slice_, size))


def regressor_infer(model: RpeRegressor, slice_: np.ndarray) -> float:
    """Raw network output for a prepared slice; callers clamp at zero for reporting."""
    slice_ = np.asarray(slice_, dtype=np.float32)
    expected = (model.input_size, model.input_size)
    if slice_.shape != expected:
        raise ShapeMismatchError(f'regressor expects a {expected} slice, got {slice_.shape}')
    model.eval()
    with torch.no_grad():
        return float(model(torch.from_numpy(np.ascontiguousarray(slice_))[None, None])[0])


def save_model(path: Union[str, Path], model: RpeRegressor):
    tensors = [t.detach().cpu().numpy() for t in model.state_dict().values()]
    Path(path).write_bytes(encode_rpem(model.input_size, model.widths, tensors))


def load_model(path: Union[str, Path]) -> RpeRegressor:
    input_size, widths, tensors = decode_rpem(Path(path).read_bytes())
    model = RpeRegressor(widths, input_size)
    state = model.state_dict()
    if len(tensors) != len(state):
        raise FormatError(f'{path}: {len(tensors)} tensors stored, model has {len(state)}')
    loaded = {}
    for (name, reference), array in zip(state.items(), tensors):
        if tuple(reference.shape) != array.shape:
            raise FormatError(f'{path}: tensor {name} has shape {array.shape}, expected {tuple(reference.shape)}')
        loaded[name] = torch.from_numpy(array)
    model.load_state_dict(loaded)
    model.eval()
    return model


class RegressorMetric(ImageQualityMetric):
    kind = IqmKind.REGRESSOR

    def __init__(self, model: RpeRegressor):
        self.model = model

    def evaluate(self, slice_, motion=None) -> float:
        return regressor_infer(self.model, prepare_slice(slice_, self.model.input_size))
