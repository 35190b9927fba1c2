"""Projection geometry of a calibrated circular cone-beam acquisition.

World frame: isocenter at the origin, z is the rotation axis. View ``k`` has its
source at ``sid * (sin θ_k, -cos θ_k, 0)`` with ``θ_k = k * angular_range / n_views``.
The detector u-axis is ``(-cos θ, -sin θ, 0)`` and the v-axis is ``+z``, so a
projection matrix maps world millimetres to homogeneous detector pixels and its
third row is normalised to the (positive) depth along the central ray.
"""
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial.transform import Rotation

from epifocus.constants import DEGENERATE_WEIGHT, MARKER_CUBE_SIDE_MM, RIGID_TOLERANCE
from epifocus.errors import DegenerateProjectionError, GeometryError

TWO_PI = 2 * math.pi


class DetectorSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    nu: int = Field(ge=2)
    nv: int = Field(ge=2)
    du: float = Field(gt=0)
    dv: float = Field(gt=0)
    u0: float = None
    v0: float = None

    @model_validator(mode='before')
    @classmethod
    def _default_principal_point(cls, data):
        if isinstance(data, dict):
            data = dict(data)
            if data.get('u0') is None and 'nu' in data:
                data['u0'] = (int(data['nu']) - 1) / 2
            if data.get('v0') is None and 'nv' in data:
                data['v0'] = (int(data['nv']) - 1) / 2
        return data

    @model_validator(mode='after')
    def _check_principal_point(self):
        if not 0 <= self.u0 < self.nu:
            raise ValueError(f'u0 must lie in [0, nu), got {self.u0}')
        if not 0 <= self.v0 < self.nv:
            raise ValueError(f'v0 must lie in [0, nv), got {self.v0}')
        return self

    def corners_mm(self) -> np.ndarray:
        """Detector corners (pixel edges) in mm relative to the principal point, shape (4, 2)."""
        us = np.array([-0.5 - self.u0, self.nu - 0.5 - self.u0]) * self.du
        vs = np.array([-0.5 - self.v0, self.nv - 0.5 - self.v0]) * self.dv
        return np.array([(u, v) for u in us for v in vs])

    @property
    def half_diagonal_mm(self) -> float:
        return float(np.max(np.hypot(*self.corners_mm().T)))

    def offsets_mm(self) -> Tuple[np.ndarray, np.ndarray]:
        """Column and row offsets from the principal point in mm."""
        return (np.arange(self.nu) - self.u0) * self.du, (np.arange(self.nv) - self.v0) * self.dv


class CircularGeometry(BaseModel):
    model_config = ConfigDict(frozen=True)

    sid: float = Field(gt=0)
    sdd: float = Field(gt=0)
    n_views: int = Field(ge=2)
    angular_range: float = Field(default=TWO_PI, gt=0, le=TWO_PI + 1e-12)
    detector: DetectorSpec

    @model_validator(mode='after')
    def _check_distances(self):
        if not self.sid < self.sdd:
            raise ValueError(f'source-isocenter distance {self.sid} must be below source-detector distance {self.sdd}')
        return self

    @property
    def angular_step(self) -> float:
        return self.angular_range / self.n_views

    @property
    def is_full_scan(self) -> bool:
        return abs(self.angular_range - TWO_PI) < 1e-9

    def angles(self) -> np.ndarray:
        return np.arange(self.n_views) * self.angular_step

    @property
    def magnification(self) -> float:
        return self.sdd / self.sid


def check_projection_matrix(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (3, 4):
        raise GeometryError(f'projection matrix must be 3x4, got {P.shape}')
    if not np.all(np.isfinite(P)):
        raise GeometryError('projection matrix has non-finite entries')
    if abs(np.linalg.det(P[:, :3])) < 1e-12 * max(1.0, np.abs(P[:, :3]).max() ** 3):
        raise GeometryError('left 3x3 block of the projection matrix is singular')
    return P


@dataclass(frozen=True)
class Trajectory:
    views: np.ndarray
    geometry: CircularGeometry

    def __post_init__(self):
        views = np.asarray(self.views, dtype=np.float64)
        if views.ndim != 3 or views.shape[1:] != (3, 4):
            raise GeometryError(f'trajectory views must have shape (n, 3, 4), got {views.shape}')
        if len(views) != self.geometry.n_views:
            raise GeometryError(f'trajectory has {len(views)} views, geometry expects {self.geometry.n_views}')
        for P in views:
            check_projection_matrix(P)
        views.setflags(write=False)
        object.__setattr__(self, 'views', views)

    def __len__(self):
        return len(self.views)

    def __getitem__(self, i) -> np.ndarray:
        return self.views[i]


def is_rigid(T, tol: float = RIGID_TOLERANCE) -> bool:
    T = np.asarray(T, dtype=np.float64)
    if T.shape != (4, 4):
        return False
    R = T[:3, :3]
    return bool(
        np.linalg.norm(R.T @ R - np.eye(3)) < tol
        and abs(np.linalg.det(R) - 1) <= tol
        and np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0])
    )


def se3_from_params(rx: float, ry: float, rz: float, tx: float, ty: float, tz: float) -> np.ndarray:
    """Rigid transform with R = Rz(rz) @ Ry(ry) @ Rx(rx) (radians) and translation in mm."""
    return se3_batch(np.array([[rx, ry, rz, tx, ty, tz]], dtype=np.float64))[0]


def se3_batch(params) -> np.ndarray:
    """Vectorised ``se3_from_params`` over rows of (rx, ry, rz, tx, ty, tz)."""
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    T = np.zeros((len(params), 4, 4))
    # intrinsic ZYX: Rz(rz) Ry(ry) Rx(rx)
    T[:, :3, :3] = Rotation.from_euler('ZYX', params[:, [2, 1, 0]]).as_matrix()
    T[:, :3, 3] = params[:, 3:]
    T[:, 3, 3] = 1.0
    return T


def invert_rigid(T) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    R = T[..., :3, :3]
    t = T[..., :3, 3]
    inv = np.zeros_like(T)
    Rt = np.swapaxes(R, -1, -2)
    inv[..., :3, :3] = Rt
    inv[..., :3, 3] = -np.einsum('...ij,...j->...i', Rt, t)
    inv[..., 3, 3] = 1.0
    return inv


@dataclass(frozen=True)
class MotionTrajectory:
    transforms: np.ndarray

    def __post_init__(self):
        transforms = np.asarray(self.transforms, dtype=np.float64)
        if transforms.ndim != 3 or transforms.shape[1:] != (4, 4):
            raise GeometryError(f'motion must have shape (n, 4, 4), got {transforms.shape}')
        for i, T in enumerate(transforms):
            if not is_rigid(T):
                raise GeometryError(f'motion of view {i} is not rigid')
        transforms.setflags(write=False)
        object.__setattr__(self, 'transforms', transforms)

    @classmethod
    def identity(cls, n_views: int) -> 'MotionTrajectory':
        return cls(np.tile(np.eye(4), (n_views, 1, 1)))

    @classmethod
    def from_params(cls, params) -> 'MotionTrajectory':
        return cls(se3_batch(params))

    def __len__(self):
        return len(self.transforms)

    def __getitem__(self, i) -> np.ndarray:
        return self.transforms[i]

    def inverse(self) -> 'MotionTrajectory':
        return MotionTrajectory(invert_rigid(self.transforms))

    def compose(self, other: 'MotionTrajectory') -> 'MotionTrajectory':
        """Per-view product ``self_i @ other_i``."""
        if len(other) != len(self):
            raise GeometryError(f'cannot compose motions of {len(self)} and {len(other)} views')
        return MotionTrajectory(self.transforms @ other.transforms)


def check_markers(markers) -> np.ndarray:
    markers = np.atleast_2d(np.asarray(markers, dtype=np.float64))
    if markers.size == 0 or markers.shape[1] != 3:
        raise GeometryError(f'marker set must be a nonempty (m, 3) array, got {markers.shape}')
    return markers


def default_markers(side: float = MARKER_CUBE_SIDE_MM) -> np.ndarray:
    h = side / 2
    corners = [(x, y, z) for x in (-h, h) for y in (-h, h) for z in (-h, h)]
    return np.array(corners + [(0.0, 0.0, 0.0)])


def markers_in_field_of_view(traj: Trajectory, markers) -> bool:
    """True if every marker projects onto the detector in every motion-free view."""
    det = traj.geometry.detector
    uv = _project_batch(traj.views, check_markers(markers))
    return bool(np.all((uv[..., 0] >= -0.5) & (uv[..., 0] <= det.nu - 0.5)
                       & (uv[..., 1] >= -0.5) & (uv[..., 1] <= det.nv - 0.5)))


def circular_trajectory(geom: CircularGeometry) -> Trajectory:
    det = geom.detector
    K = np.array([
        [geom.sdd / det.du, 0.0, det.u0],
        [0.0, geom.sdd / det.dv, det.v0],
        [0.0, 0.0, 1.0],
    ])
    views = np.empty((geom.n_views, 3, 4))
    for k, theta in enumerate(geom.angles()):
        c, s = math.cos(theta), math.sin(theta)
        source = geom.sid * np.array([s, -c, 0.0])
        R = np.array([
            [-c, -s, 0.0],  # u
            [0.0, 0.0, 1.0],  # v
            [-s, c, 0.0],  # central ray
        ])
        views[k] = K @ np.hstack([R, (-R @ source)[:, None]])
    return Trajectory(views, geom)


def compose_trajectory(traj: Trajectory, motion: MotionTrajectory) -> Trajectory:
    """Effective cameras ``T_i @ M_i``."""
    if len(motion) != len(traj):
        raise GeometryError(f'motion has {len(motion)} views, trajectory has {len(traj)}')
    return Trajectory(traj.views @ motion.transforms, traj.geometry)


def camera_center(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    return -np.linalg.solve(P[..., :3], P[..., 3, None])[..., 0]


def normalize_projection(P) -> np.ndarray:
    """Scale ``P`` so that its third row measures depth in mm, positive at the isocenter."""
    P = np.asarray(P, dtype=np.float64)
    scale = np.linalg.norm(P[..., 2, :3], axis=-1)
    sign = np.where(P[..., 2, 3] >= 0, 1.0, -1.0)
    return P / (scale * sign)[..., None, None]


def project_point(P, x: Sequence[float]) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    xh = np.append(np.asarray(x, dtype=np.float64), 1.0)
    u, v, w = P @ xh
    if abs(w) <= DEGENERATE_WEIGHT:
        raise DegenerateProjectionError(f'point {tuple(x)} lies on the principal plane of the camera')
    return np.array([u / w, v / w])


def _homogeneous_batch(views: np.ndarray, markers: np.ndarray) -> np.ndarray:
    xh = np.hstack([markers, np.ones((len(markers), 1))])
    return np.einsum('nij,mj->nmi', views, xh)


def _project_batch(views: np.ndarray, markers: np.ndarray) -> np.ndarray:
    h = _homogeneous_batch(views, markers)
    return h[..., :2] / h[..., 2:]


def _checked_projection(views: np.ndarray, markers: np.ndarray) -> np.ndarray:
    h = _homogeneous_batch(views, markers)
    bad = np.argwhere(np.abs(h[..., 2]) <= DEGENERATE_WEIGHT)
    if len(bad):
        view, marker = (int(i) for i in bad[0])
        raise DegenerateProjectionError(
            f'degenerate projection of marker {marker} {tuple(markers[marker])} in view {view}',
            view=view, marker=marker)
    return h[..., :2] / h[..., 2:]


def rpe_per_view(traj: Trajectory, motion: MotionTrajectory, markers) -> np.ndarray:
    """Mean marker displacement in detector pixels for every view."""
    markers = check_markers(markers)
    if len(motion) != len(traj):
        raise GeometryError(f'motion has {len(motion)} views, trajectory has {len(traj)}')
    reference = _checked_projection(traj.views, markers)
    moved = _checked_projection(traj.views @ motion.transforms, markers)
    return np.linalg.norm(moved - reference, axis=-1).mean(axis=1)


def rpe(traj: Trajectory, motion: MotionTrajectory, markers) -> float:
    return float(rpe_per_view(traj, motion, markers).mean())


def rpe_between(traj: Trajectory, estimate: MotionTrajectory, reference: MotionTrajectory, markers) -> float:
    """RPE of the geometry ``T_i @ estimate_i`` against ``T_i @ reference_i``."""
    return rpe(compose_trajectory(traj, reference), reference.inverse().compose(estimate), markers)


def geometry_from_views(views, nu: int, nv: int, du: float, dv: float) -> CircularGeometry:
    """Recover the circular acquisition parameters from calibrated matrices."""
    views = normalize_projection(np.asarray(views, dtype=np.float64))
    if len(views) < 2:
        raise GeometryError('at least two views are needed to recover a circular geometry')
    P = views[0]
    e_w = P[2, :3]
    u0 = float(P[0, :3] @ e_w)
    v0 = float(P[1, :3] @ e_w)
    sdd = float(np.linalg.norm(P[0, :3] - u0 * e_w)) * du
    centers = camera_center(views)
    sid = float(np.linalg.norm(centers, axis=1).mean())
    c0, c1 = centers[0], centers[1]
    step = math.atan2(np.cross(c0, c1)[2], float(c0 @ c1)) % TWO_PI
    detector = DetectorSpec(nu=nu, nv=nv, du=du, dv=dv, u0=u0, v0=v0)
    angular_range = min(step * len(views), TWO_PI)
    return CircularGeometry(sid=sid, sdd=sdd, n_views=len(views), angular_range=angular_range, detector=detector)
