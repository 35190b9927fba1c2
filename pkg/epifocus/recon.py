"""FDK reconstruction with motion-adjusted projection matrices."""
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit, prange
from scipy import fft, signal

from epifocus.errors import ShapeMismatchError
from epifocus.geometry import CircularGeometry, MotionTrajectory, Trajectory, compose_trajectory, normalize_projection
from epifocus.phantom import ProjectionStack, Volume, VolumeGrid, check_degenerate_depth, check_same_geometry


class ReconMode(str, Enum):
    FULL = 'full'
    CENTRAL_SLICE = 'central_slice'


class FilterMethod(str, Enum):
    SPATIAL = 'spatial'
    FFT = 'fft'


@dataclass(frozen=True)
class FilteredProjections:
    """Cosine-weighted, ramp-filtered data; independent of the motion estimate."""
    data: np.ndarray
    geometry: CircularGeometry
    method: FilterMethod


def cosine_weights(geometry: CircularGeometry) -> np.ndarray:
    us, vs = geometry.detector.offsets_mm()
    return geometry.sdd / np.sqrt(geometry.sdd ** 2 + us[None, :] ** 2 + vs[:, None] ** 2)


def cosine_weight(stack: ProjectionStack) -> ProjectionStack:
    return ProjectionStack(stack.data * cosine_weights(stack.geometry).astype(np.float32), stack.geometry)


def ramp_kernel(nu: int, du: float) -> np.ndarray:
    """Ram-Lak taps for offsets ``-(nu - 1) .. nu - 1``."""
    n = np.arange(-(nu - 1), nu)
    h = np.zeros(len(n))
    h[n == 0] = 1.0 / (4.0 * du ** 2)
    odd = n % 2 == 1
    h[odd] = -1.0 / (math.pi * n[odd] * du) ** 2
    return h


def filter_rows(rows: np.ndarray, du: float, method: FilterMethod = FilterMethod.FFT) -> np.ndarray:
    """Linear convolution of every row (last axis) with the Ram-Lak kernel."""
    rows = np.asarray(rows, dtype=np.float64)
    nu = rows.shape[-1]
    if nu < 4:
        raise ShapeMismatchError(f'ramp filtering needs at least 4 detector columns, got {nu}')
    h = ramp_kernel(nu, du)
    if FilterMethod(method) == FilterMethod.SPATIAL:
        return signal.convolve(rows, h.reshape((1,) * (rows.ndim - 1) + (-1,)), mode='same')
    size = 1 << (2 * nu - 1).bit_length()
    circular = np.zeros(size)
    circular[:nu] = h[nu - 1:]
    circular[size - nu + 1:] = h[:nu - 1]
    response = fft.rfft(circular)
    return fft.irfft(fft.rfft(rows, n=size, axis=-1) * response, n=size, axis=-1)[..., :nu]


def ramp_filter(stack: ProjectionStack, method: FilterMethod = FilterMethod.FFT) -> ProjectionStack:
    filtered = filter_rows(stack.data, stack.geometry.detector.du, method)
    return ProjectionStack(filtered.astype(np.float32), stack.geometry)


def prepare_projections(stack: ProjectionStack, method: FilterMethod = FilterMethod.FFT) -> FilteredProjections:
    geometry = stack.geometry
    weighted = stack.data.astype(np.float64) * cosine_weights(geometry)
    filtered = filter_rows(weighted, geometry.detector.du, method)
    # angular measure, full-scan redundancy and filtering on the physical detector
    scale = 0.5 * geometry.angular_step * geometry.magnification * geometry.detector.du
    if not geometry.is_full_scan:
        scale *= 2.0
    return FilteredProjections(np.ascontiguousarray(filtered * scale), geometry, FilterMethod(method))


@njit(parallel=True, cache=True)
def _backproject_kernel(filtered, mats, xs, ys, zs, sid, out):
    n_views, nv, nu = filtered.shape
    nz, ny, nx = out.shape
    for row in prange(nz * ny):
        k = row // ny
        j = row % ny
        z = zs[k]
        y = ys[j]
        for i in range(n_views):
            P = mats[i]
            for ix in range(nx):
                x = xs[ix]
                w = P[2, 0] * x + P[2, 1] * y + P[2, 2] * z + P[2, 3]
                u = (P[0, 0] * x + P[0, 1] * y + P[0, 2] * z + P[0, 3]) / w
                v = (P[1, 0] * x + P[1, 1] * y + P[1, 2] * z + P[1, 3]) / w
                if u < 0.0 or v < 0.0 or u > nu - 1 or v > nv - 1:
                    continue
                iu = min(int(u), nu - 2)
                iv = min(int(v), nv - 2)
                fu = u - iu
                fv = v - iv
                value = (1.0 - fv) * ((1.0 - fu) * filtered[i, iv, iu] + fu * filtered[i, iv, iu + 1]) \
                    + fv * ((1.0 - fu) * filtered[i, iv + 1, iu] + fu * filtered[i, iv + 1, iu + 1])
                ratio = sid / w
                out[k, j, ix] += ratio * ratio * value


def backproject(filtered: FilteredProjections, traj: Trajectory, motion: MotionTrajectory, grid: VolumeGrid,
                mode: ReconMode = ReconMode.FULL) -> Volume:
    if filtered.geometry != traj.geometry:
        raise ShapeMismatchError('filtered projections and trajectory belong to different geometries')
    if ReconMode(mode) == ReconMode.CENTRAL_SLICE:
        grid = grid.central_slice()
    views = normalize_projection(compose_trajectory(traj, motion).views)
    check_degenerate_depth(views, grid.corners())
    xs, ys, zs = grid.axes()
    out = np.zeros(grid.shape, dtype=np.float64)
    _backproject_kernel(filtered.data, np.ascontiguousarray(views), xs, ys, zs, traj.geometry.sid, out)
    return Volume(out.astype(np.float32), grid)


def fdk(stack: ProjectionStack, traj: Trajectory, motion: MotionTrajectory, grid: VolumeGrid,
        mode: ReconMode = ReconMode.FULL, method: FilterMethod = FilterMethod.FFT) -> Volume:
    check_same_geometry(stack, traj)
    return backproject(prepare_projections(stack, method), traj, motion, grid, mode)
