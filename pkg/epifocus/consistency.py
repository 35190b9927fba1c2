"""Epipolar consistency of cone-beam projections through derivatives of their 2-D Radon transform.

Every plane through two source positions is seen as a line in both projections. The
s-derivative of the Radon transform of the cosine-weighted projection along those two
lines must agree for a consistent geometry, so the squared differences over a pencil of
planes measure how well a motion estimate explains the data.
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional, Tuple

import numpy as np
from numba import njit, prange
from scipy.ndimage import gaussian_filter1d

from epifocus.constants import ECC_KAPPA_SAMPLES, ECC_MAX_SEPARATION, ECC_PAIR_STRIDE, ECC_SMOOTHING_PX, \
    ECC_THETA_SAMPLES, MIN_BASELINE_MM
from epifocus.errors import DegeneratePairError, EmptyPairError, GeometryError
from epifocus.geometry import DetectorSpec, MotionTrajectory, Trajectory, camera_center, compose_trajectory, \
    normalize_projection
from epifocus.phantom import ProjectionStack

logger = logging.getLogger('epifocus.consistency')


@dataclass(frozen=True)
class RadonLUT:
    """Radon derivatives on the grid ``θ_k = k π / n_theta``, ``s ∈ linspace(-s_max, s_max, n_s)``."""
    values: np.ndarray
    s_max: float
    cone_sdd: Optional[float] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim == 2:
            values = values[None]
        if values.ndim != 3 or min(values.shape[1:]) < 16:
            raise ValueError(f'Radon LUT needs at least 16 samples in θ and s, got {values.shape}')
        if not np.all(np.isfinite(values)):
            raise ValueError('Radon LUT contains non-finite values')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i) -> 'RadonLUT':
        return RadonLUT(self.values[i:i + 1], self.s_max, self.cone_sdd)

    @property
    def n_theta(self) -> int:
        return self.values.shape[1]

    @property
    def n_s(self) -> int:
        return self.values.shape[2]

    @property
    def dtheta(self) -> float:
        return math.pi / self.n_theta

    @property
    def ds(self) -> float:
        return 2 * self.s_max / (self.n_s - 1)

    def theta_grid(self) -> np.ndarray:
        return np.arange(self.n_theta) * self.dtheta

    def s_grid(self) -> np.ndarray:
        return np.linspace(-self.s_max, self.s_max, self.n_s)

    def lookup(self, view: np.ndarray, theta: np.ndarray, s: np.ndarray) -> np.ndarray:
        """Bilinear interpolation; θ wraps at π through R'(θ + π, s) = -R'(θ, -s); zero outside ``|s| > s_max``."""
        view = np.asarray(view, dtype=np.int64)
        theta = np.asarray(theta, dtype=np.float64)
        s = np.asarray(s, dtype=np.float64)
        t = theta / self.dtheta
        i0 = np.clip(np.floor(t).astype(np.int64), 0, self.n_theta - 1)
        f = t - i0
        lower = self._sample_s(view, i0, s)
        wrap = i0 + 1 >= self.n_theta
        i1 = np.where(wrap, 0, i0 + 1)
        upper = np.where(wrap, -self._sample_s(view, i1, -s), self._sample_s(view, i1, s))
        return (1.0 - f) * lower + f * upper

    def _sample_s(self, view: np.ndarray, row: np.ndarray, s: np.ndarray) -> np.ndarray:
        x = (s + self.s_max) / self.ds
        inside = (x >= 0) & (x <= self.n_s - 1)
        j0 = np.clip(np.floor(x).astype(np.int64), 0, self.n_s - 2)
        g = x - j0
        table = self.values
        value = (1.0 - g) * table[view, row, j0] + g * table[view, row, j0 + 1]
        return np.where(inside, value, 0.0)


@njit(parallel=True, cache=True)
def _radon_kernel(image, u0, v0, du, dv, thetas, ss, t_max, step, out):
    nv, nu = image.shape
    n_t = int(2.0 * t_max / step) + 1
    for k in prange(thetas.shape[0]):
        c = math.cos(thetas[k])
        sn = math.sin(thetas[k])
        for m in range(ss.shape[0]):
            s = ss[m]
            total = 0.0
            for n in range(n_t):
                t = -t_max + n * step
                u = (s * c - t * sn) / du + u0
                v = (s * sn + t * c) / dv + v0
                if u < -1.0 or v < -1.0 or u > nu or v > nv:
                    continue
                iu = int(math.floor(u))
                iv = int(math.floor(v))
                fu = u - iu
                fv = v - iv
                value = 0.0
                # pixels outside the detector read as zero
                if 0 <= iv < nv:
                    if 0 <= iu < nu:
                        value += (1.0 - fv) * (1.0 - fu) * image[iv, iu]
                    if 0 <= iu + 1 < nu:
                        value += (1.0 - fv) * fu * image[iv, iu + 1]
                if 0 <= iv + 1 < nv:
                    if 0 <= iu < nu:
                        value += fv * (1.0 - fu) * image[iv + 1, iu]
                    if 0 <= iu + 1 < nu:
                        value += fv * fu * image[iv + 1, iu + 1]
                total += value
            out[k, m] = total * step


def default_n_s(detector: DetectorSpec) -> int:
    return max(16, int(math.ceil(2 * 2 * detector.half_diagonal_mm / detector.du)))


def radon_transform(image: np.ndarray, detector: DetectorSpec, n_theta: int, n_s: int) -> Tuple[np.ndarray, float]:
    image = np.ascontiguousarray(image, dtype=np.float64)
    if image.shape != (detector.nv, detector.nu):
        raise ValueError(f'image shape {image.shape} does not match detector ({detector.nv}, {detector.nu})')
    if not np.all(np.isfinite(image)):
        raise ValueError('projection image contains non-finite values')
    s_max = detector.half_diagonal_mm
    thetas = np.arange(n_theta) * math.pi / n_theta
    ss = np.linspace(-s_max, s_max, n_s)
    step = min(detector.du, detector.dv) / 2
    out = np.empty((n_theta, n_s))
    _radon_kernel(image, detector.u0, detector.v0, detector.du, detector.dv, thetas, ss, s_max, step, out)
    return out, s_max


def radon_derivative_lut(image: np.ndarray, detector: DetectorSpec, n_theta: int = ECC_THETA_SAMPLES,
                         n_s: int = None, sdd: Optional[float] = None, cone_weight: bool = False,
                         smoothing_px: float = 0.0) -> RadonLUT:
    """LUT of ∂R/∂s for one projection; ``sdd=None`` disables the cosine pre-weighting.

    ``smoothing_px`` is the width (detector pixels) of a Gaussian applied along s. Corresponding
    epipolar lines are smoothed by the same kernel, so consistent data stay consistent while the
    pixel aliasing of sharp edges averages out.
    """
    n_s = n_s or default_n_s(detector)
    if min(n_theta, n_s) < 16:
        raise ValueError('Radon LUT needs at least 16 samples in θ and s')
    if smoothing_px < 0:
        raise ValueError(f'smoothing width must be non-negative, got {smoothing_px}')
    image = np.asarray(image, dtype=np.float64)
    if sdd is not None:
        us, vs = detector.offsets_mm()
        image = image * (sdd / np.sqrt(sdd ** 2 + us[None, :] ** 2 + vs[:, None] ** 2))
    radon, s_max = radon_transform(image, detector, n_theta, n_s)
    s_grid = np.linspace(-s_max, s_max, n_s)
    derivative = np.gradient(radon, s_grid, axis=1)
    if smoothing_px > 0:
        sigma = smoothing_px * min(detector.du, detector.dv) / (s_grid[1] - s_grid[0])
        derivative = gaussian_filter1d(derivative, sigma, axis=1, mode='constant')
    return RadonLUT(derivative, s_max, sdd if cone_weight else None)


def build_luts(stack: ProjectionStack, n_theta: int = ECC_THETA_SAMPLES, n_s: int = None,
               cone_weight: bool = False, smoothing_px: float = ECC_SMOOTHING_PX) -> RadonLUT:
    geometry = stack.geometry
    entries = [
        radon_derivative_lut(image, geometry.detector, n_theta, n_s, geometry.sdd, smoothing_px=smoothing_px).values[0]
        for image in stack.data
    ]
    return RadonLUT(np.stack(entries), geometry.detector.half_diagonal_mm, geometry.sdd if cone_weight else None)


class EpipolarSample(NamedTuple):
    kappa: float
    line_i: Tuple[float, float]
    line_j: Tuple[float, float]


@dataclass(frozen=True)
class EpipolarSamples:
    """Struct of arrays of epipolar line pairs; ``sign`` folds line orientations into θ ∈ [0, π)."""
    kappa: np.ndarray
    theta_i: np.ndarray
    s_i: np.ndarray
    sign_i: np.ndarray
    theta_j: np.ndarray
    s_j: np.ndarray
    sign_j: np.ndarray

    def __len__(self):
        return len(self.kappa)

    def __iter__(self) -> Iterator[EpipolarSample]:
        for k in range(len(self)):
            yield EpipolarSample(float(self.kappa[k]), (float(self.theta_i[k]), float(self.s_i[k])),
                                 (float(self.theta_j[k]), float(self.s_j[k])))


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _fold(kappa: np.ndarray, reference: np.ndarray) -> np.ndarray:
    # planes are unoriented: κ and κ + π describe the same plane
    return (kappa - reference + math.pi / 2) % math.pi - math.pi / 2 + reference


def _detector_rays(views: np.ndarray, detector: DetectorSpec) -> Tuple[np.ndarray, np.ndarray]:
    corners = np.array([[u, v, 1.0] for u in (-0.5, detector.nu - 0.5) for v in (-0.5, detector.nv - 0.5)])
    inverse = np.linalg.inv(views[:, :, :3])
    corner_rays = np.einsum('bij,cj->bci', inverse, corners)
    principal_rays = inverse @ np.array([detector.u0, detector.v0, 1.0])
    return corner_rays, principal_rays


def _plane_lines(views: np.ndarray, planes: np.ndarray, detector: DetectorSpec):
    """Map planes (B, K, 4) through the dual projection of each view (B, 3, 4) to detector lines in mm."""
    pinv = np.swapaxes(views, 1, 2) @ np.linalg.inv(views @ np.swapaxes(views, 1, 2))
    lines = np.einsum('bcr,bkc->bkr', pinv, planes)
    a = lines[..., 0] / detector.du
    b = lines[..., 1] / detector.dv
    c = lines[..., 0] * detector.u0 + lines[..., 1] * detector.v0 + lines[..., 2]
    norm = np.hypot(a, b)
    a, b, c = a / norm, b / norm, c / norm
    corners = detector.corners_mm()
    side = a[..., None] * corners[:, 0] + b[..., None] * corners[:, 1] + c[..., None]
    hits = (side.min(axis=-1) < 0) & (side.max(axis=-1) > 0)
    theta = np.arctan2(b, a)
    s = -c
    flip = theta < 0
    theta = np.where(flip, theta + math.pi, theta)
    s = np.where(flip, -s, s)
    sign = np.where(flip, -1.0, 1.0)
    wrap = theta >= math.pi
    theta = np.where(wrap, theta - math.pi, theta)
    s = np.where(wrap, -s, s)
    sign = np.where(wrap, -sign, sign)
    return theta, s, sign, hits


def _epipolar_batch(views_i: np.ndarray, views_j: np.ndarray, detector: DetectorSpec, n_kappa: int):
    views_i = normalize_projection(views_i)
    views_j = normalize_projection(views_j)
    c_i = camera_center(views_i)
    c_j = camera_center(views_j)
    baseline = c_j - c_i
    length = np.linalg.norm(baseline, axis=-1)
    if np.any(length <= MIN_BASELINE_MM):
        raise DegeneratePairError(f'source positions coincide (baseline {length.min():.3g} mm)')
    b = baseline / length[:, None]
    n0 = np.cross(c_i, c_j)
    collinear = np.linalg.norm(n0, axis=-1) <= 1e-9 * length * np.maximum(np.linalg.norm(c_i, axis=-1), 1.0)
    if np.any(collinear):
        fallback = np.array([0.0, 0.0, 1.0]) - b[:, 2:3] * b
        tilted = np.linalg.norm(fallback, axis=-1) < 1e-6
        fallback[tilted] = np.array([1.0, 0.0, 0.0]) - b[tilted, 0:1] * b[tilted]
        n0 = np.where(collinear[:, None], fallback, n0)
    n0 = _unit(n0 - np.sum(n0 * b, axis=-1, keepdims=True) * b)
    m = np.cross(b, n0)

    def plane_angles(rays):
        # κ of the plane through the baseline containing each ray
        return np.arctan2(-np.einsum('b...j,bj->b...', rays, n0), np.einsum('b...j,bj->b...', rays, m))

    corners_i, principal_i = _detector_rays(views_i, detector)
    corners_j, _ = _detector_rays(views_j, detector)
    reference = plane_angles(principal_i)
    kappa_i = _fold(plane_angles(corners_i), reference[:, None])
    kappa_j = _fold(plane_angles(corners_j), reference[:, None])
    lo = np.maximum(kappa_i.min(axis=1), kappa_j.min(axis=1))
    hi = np.minimum(kappa_i.max(axis=1), kappa_j.max(axis=1))
    overlap = hi > lo
    fractions = (np.arange(n_kappa) + 0.5) / n_kappa
    kappa = lo[:, None] + fractions[None, :] * np.where(overlap, hi - lo, 0.0)[:, None]

    normals = np.cos(kappa)[..., None] * n0[:, None, :] + np.sin(kappa)[..., None] * m[:, None, :]
    planes = np.concatenate([normals, -np.einsum('bkj,bj->bk', normals, c_i)[..., None]], axis=-1)
    theta_i, s_i, sign_i, hits_i = _plane_lines(views_i, planes, detector)
    theta_j, s_j, sign_j, hits_j = _plane_lines(views_j, planes, detector)
    valid = hits_i & hits_j & overlap[:, None]
    return kappa, (theta_i, s_i, sign_i), (theta_j, s_j, sign_j), valid


def epipolar_samples(P_i: np.ndarray, P_j: np.ndarray, detector: DetectorSpec,
                     n_kappa: int = ECC_KAPPA_SAMPLES) -> EpipolarSamples:
    """Pairs of corresponding epipolar lines for planes through both source positions."""
    kappa, line_i, line_j, valid = _epipolar_batch(np.asarray(P_i)[None], np.asarray(P_j)[None], detector, n_kappa)
    keep = valid[0]
    return EpipolarSamples(kappa[0, keep], *(x[0, keep] for x in line_i), *(x[0, keep] for x in line_j))


def _cone_factor(lut: RadonLUT, s: np.ndarray) -> np.ndarray:
    if lut.cone_sdd is None:
        return np.ones_like(s)
    return (lut.cone_sdd ** 2 + s ** 2) / lut.cone_sdd ** 2


def _line_values(lut: RadonLUT, view, theta, s, sign) -> np.ndarray:
    return sign * lut.lookup(view, theta, s) * _cone_factor(lut, s)


def ecc_pair(lut_i: RadonLUT, lut_j: RadonLUT, samples: EpipolarSamples) -> float:
    if len(samples) == 0:
        raise EmptyPairError('no epipolar line pair hits both detectors')
    zeros = np.zeros(len(samples), dtype=np.int64)
    values_i = _line_values(lut_i, zeros, samples.theta_i, samples.s_i, samples.sign_i)
    values_j = _line_values(lut_j, zeros, samples.theta_j, samples.s_j, samples.sign_j)
    return float(np.mean((values_i - values_j) ** 2))


def view_pairs(n_views: int, angular_step: float, full_scan: bool, stride: int = ECC_PAIR_STRIDE,
               max_separation: float = ECC_MAX_SEPARATION) -> np.ndarray:
    """Pairs ``(i, i + d)`` for offsets ``d = stride, 2 stride, ...`` up to the angular separation cap."""
    if stride < 1:
        raise ValueError(f'pair stride must be positive, got {stride}')
    pairs = set()
    offset = stride
    while offset < n_views and offset * angular_step <= max_separation + 1e-12:
        for i in range(n_views):
            j = i + offset
            if j >= n_views:
                if not full_scan:
                    break
                j -= n_views
            pairs.add((min(i, j), max(i, j)))
        offset += stride
    return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class EccBreakdown:
    total: float
    pair_values: np.ndarray
    n_pairs: int
    n_empty: int


def empty_pairs_message(breakdown: EccBreakdown) -> str:
    return f'skipped {breakdown.n_empty} of {breakdown.n_pairs} view pairs without surviving epipolar samples'


def ecc_breakdown(traj: Trajectory, motion: MotionTrajectory, luts: RadonLUT, pair_stride: int = ECC_PAIR_STRIDE,
                  n_kappa: int = ECC_KAPPA_SAMPLES, max_separation: float = ECC_MAX_SEPARATION,
                  pairs: np.ndarray = None) -> EccBreakdown:
    geometry = traj.geometry
    if len(luts) != len(traj):
        raise GeometryError(f'{len(luts)} LUT entries for {len(traj)} views')
    if pairs is None:
        pairs = view_pairs(len(traj), geometry.angular_step, geometry.is_full_scan, pair_stride, max_separation)
    if len(pairs) == 0:
        raise GeometryError('no view pairs within the configured stride and angular separation')
    views = compose_trajectory(traj, motion).views
    kappa, line_i, line_j, valid = _epipolar_batch(views[pairs[:, 0]], views[pairs[:, 1]], geometry.detector,
                                                   n_kappa)
    view_i = np.broadcast_to(pairs[:, 0:1], kappa.shape)
    view_j = np.broadcast_to(pairs[:, 1:2], kappa.shape)
    values_i = _line_values(luts, view_i, *line_i)
    values_j = _line_values(luts, view_j, *line_j)
    counts = valid.sum(axis=1)
    squared = np.where(valid, (values_i - values_j) ** 2, 0.0).sum(axis=1)
    present = counts > 0
    pair_values = np.where(present, squared / np.maximum(counts, 1), np.nan)
    n_empty = int(np.sum(~present))
    if not np.any(present):
        raise EmptyPairError('no view pair has a surviving epipolar sample')
    return EccBreakdown(float(np.sum(pair_values[present])), pair_values, len(pairs), n_empty)


def ecc_total(traj: Trajectory, motion: MotionTrajectory, luts: RadonLUT, pair_stride: int = ECC_PAIR_STRIDE,
              n_kappa: int = ECC_KAPPA_SAMPLES, max_separation: float = ECC_MAX_SEPARATION) -> float:
    """Summed pairwise consistency; the LUTs come from the measured data and are never rebuilt."""
    breakdown = ecc_breakdown(traj, motion, luts, pair_stride, n_kappa, max_separation)
    if breakdown.n_empty:
        logger.warning(empty_pairs_message(breakdown))
    return breakdown.total
