"""Spline motion models over the view index: Akima for simulated motion, PCHIP for estimates.

Estimates use scipy's ``PchipInterpolator``, whose interior slopes are the weighted harmonic mean
of the neighbouring secants with one-sided three-point end slopes (Fritsch-Butland), not the
Fritsch-Carlson slope limiter. Both variants are shape preserving: monotone node data gives a
monotone curve without overshoot.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import Akima1DInterpolator, PchipInterpolator

from epifocus.constants import FAMILIES, PARAM_NAMES, ROTATION_PARAMS
from epifocus.geometry import MotionTrajectory

logger = logging.getLogger('epifocus.motion')

AKIMA_MIN_NODES = 5


class SplineKind(str, Enum):
    AKIMA = 'akima'
    PCHIP = 'pchip'


class MotionFamily(str, Enum):
    IN_PLANE = 'in_plane'
    OUT_PLANE = 'out_plane'
    MIXED = 'mixed'

    @property
    def params(self) -> Tuple[str, ...]:
        return FAMILIES[self.value]


def _check_nodes(x_nodes, y_nodes, minimum: int):
    x_nodes = np.asarray(x_nodes, dtype=np.float64)
    y_nodes = np.asarray(y_nodes, dtype=np.float64)
    if len(x_nodes) < minimum:
        raise ValueError(f'need at least {minimum} nodes, got {len(x_nodes)}')
    if len(y_nodes) != len(x_nodes):
        raise ValueError(f'{len(x_nodes)} node positions but {len(y_nodes)} node values')
    if np.any(np.diff(x_nodes) <= 0):
        raise ValueError('node positions must be strictly increasing')
    return x_nodes, y_nodes


def _check_range(x_nodes: np.ndarray, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < x_nodes[0]) or np.any(x > x_nodes[-1]):
        raise ValueError(f'query outside the node range [{x_nodes[0]}, {x_nodes[-1]}]')
    return x


def akima_eval(x_nodes, y_nodes, x) -> Union[float, np.ndarray]:
    x_nodes, y_nodes = _check_nodes(x_nodes, y_nodes, AKIMA_MIN_NODES)
    x = _check_range(x_nodes, x)
    result = Akima1DInterpolator(x_nodes, y_nodes, axis=0)(x)
    return float(result) if result.ndim == 0 else result


def pchip_eval(x_nodes, y_nodes, x) -> Union[float, np.ndarray]:
    x_nodes, y_nodes = _check_nodes(x_nodes, y_nodes, 2)
    x = _check_range(x_nodes, x)
    result = PchipInterpolator(x_nodes, y_nodes, axis=0, extrapolate=False)(x)
    return float(result) if result.ndim == 0 else result


def node_positions(n_views: int, n_nodes: int) -> np.ndarray:
    """Uniformly spaced node view indices, first 0 and last ``n_views - 1``."""
    if n_nodes < 2 or n_nodes > n_views:
        raise ValueError(f'cannot place {n_nodes} nodes on {n_views} views')
    return np.round(np.linspace(0, n_views - 1, n_nodes)).astype(np.int64)


@dataclass(frozen=True)
class MotionSpline:
    """Six parameter tracks (rx, ry, rz in radians; tx, ty, tz in mm) over node view indices."""
    kind: SplineKind
    node_views: np.ndarray
    node_values: np.ndarray

    def __post_init__(self):
        node_views = np.asarray(self.node_views, dtype=np.int64)
        node_values = np.asarray(self.node_values, dtype=np.float64)
        if len(node_views) < 3:
            raise ValueError(f'a motion spline needs at least 3 nodes, got {len(node_views)}')
        if node_views[0] != 0 or np.any(np.diff(node_views) <= 0):
            raise ValueError('node views must start at 0 and increase strictly')
        if node_values.shape != (len(node_views), len(PARAM_NAMES)):
            raise ValueError(f'node values must have shape ({len(node_views)}, 6), got {node_values.shape}')
        if not np.all(np.isfinite(node_values)):
            raise ValueError('node values must be finite')
        object.__setattr__(self, 'kind', SplineKind(self.kind))
        object.__setattr__(self, 'node_views', node_views)
        object.__setattr__(self, 'node_values', node_values)

    @property
    def n_nodes(self) -> int:
        return len(self.node_views)

    @property
    def effective_kind(self) -> SplineKind:
        if self.kind == SplineKind.AKIMA and self.n_nodes < AKIMA_MIN_NODES:
            return SplineKind.PCHIP
        return self.kind

    def evaluate(self, views) -> np.ndarray:
        """Parameter tracks at the given view indices, shape (len(views), 6)."""
        views = np.atleast_1d(np.asarray(views, dtype=np.float64))
        if self.effective_kind != self.kind:
            logger.warning(f'Akima spline with {self.n_nodes} nodes evaluated as PCHIP')
        if self.effective_kind == SplineKind.AKIMA:
            return akima_eval(self.node_views, self.node_values, views)
        return pchip_eval(self.node_views, self.node_values, views)

    def scaled(self, factor: float) -> 'MotionSpline':
        return MotionSpline(self.kind, self.node_views, self.node_values * factor)


def spline_from_params(kind: SplineKind, node_views: Sequence[int], node_values) -> MotionSpline:
    return MotionSpline(SplineKind(kind), np.asarray(node_views), np.asarray(node_values, dtype=np.float64))


def zero_spline(kind: SplineKind, n_views: int, n_nodes: int) -> MotionSpline:
    return MotionSpline(SplineKind(kind), node_positions(n_views, n_nodes), np.zeros((n_nodes, len(PARAM_NAMES))))


def sample_motion(spline: MotionSpline, n_views: int) -> MotionTrajectory:
    return MotionTrajectory.from_params(spline.evaluate(np.arange(n_views)))


def param_mask(params: Sequence[str]) -> np.ndarray:
    unknown = set(params) - set(PARAM_NAMES)
    if unknown:
        raise ValueError(f'unknown motion parameters {sorted(unknown)}')
    return np.array([name in params for name in PARAM_NAMES])


def amplitude_vector(amplitude_mm: float, amplitude_rad: float) -> np.ndarray:
    return np.array([amplitude_rad if name in ROTATION_PARAMS else amplitude_mm for name in PARAM_NAMES])


def random_motion(seed, amplitude: Tuple[float, float], n_nodes: int, family: Union[MotionFamily, str],
                  n_views: int) -> MotionSpline:
    """Akima spline with node values uniform in ±amplitude (mm, radians) on the family's tracks.

    The first node is the reference pose and stays zero.
    """
    if n_nodes < AKIMA_MIN_NODES:
        raise ValueError(f'random motion needs at least {AKIMA_MIN_NODES} nodes, got {n_nodes}')
    family = MotionFamily(family)
    rng = np.random.default_rng(seed)
    values = rng.uniform(-1.0, 1.0, (n_nodes, len(PARAM_NAMES))) * amplitude_vector(*amplitude)
    values[:, ~param_mask(family.params)] = 0.0
    values[0] = 0.0
    return MotionSpline(SplineKind.AKIMA, node_positions(n_views, n_nodes), values)
