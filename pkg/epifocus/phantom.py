"""Analytic ellipsoid head phantom, exact cone-beam line integrals and voxelisation."""
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from numba import njit, prange
from pydantic import BaseModel, ConfigDict, Field, field_validator

from epifocus.constants import DEGENERATE_WEIGHT
from epifocus.errors import DegenerateProjectionError, GeometryError, ShapeMismatchError
from epifocus.geometry import CircularGeometry, MotionTrajectory, Trajectory, camera_center, compose_trajectory, \
    normalize_projection, se3_from_params

Vector3 = Tuple[float, float, float]


class Ellipsoid(BaseModel):
    model_config = ConfigDict(frozen=True)

    center: Vector3 = (0.0, 0.0, 0.0)
    semi_axes: Vector3
    angles: Vector3 = Field(default=(0.0, 0.0, 0.0), description='rx, ry, rz in radians (ZYX)')
    density: float

    @field_validator('semi_axes')
    @classmethod
    def _positive_axes(cls, value):
        if min(value) <= 0:
            raise ValueError(f'semi-axes must be strictly positive, got {value}')
        return value

    @property
    def rotation(self) -> np.ndarray:
        return se3_from_params(*self.angles, 0.0, 0.0, 0.0)[:3, :3]

    def contains(self, points: np.ndarray) -> np.ndarray:
        local = (np.asarray(points, dtype=np.float64) - self.center) @ self.rotation
        return np.sum((local / self.semi_axes) ** 2, axis=-1) <= 1.0


class Phantom(BaseModel):
    model_config = ConfigDict(frozen=True)

    ellipsoids: List[Ellipsoid] = Field(min_length=1)

    def scaled(self, factor: float) -> 'Phantom':
        return Phantom(ellipsoids=[e.model_copy(update={'density': e.density * factor}) for e in self.ellipsoids])

    def translated(self, offset: Sequence[float]) -> 'Phantom':
        return Phantom(ellipsoids=[
            e.model_copy(update={'center': tuple(np.add(e.center, offset).tolist())}) for e in self.ellipsoids
        ])

    def packed(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Centers, inverse-axis-scaled rotations (world -> unit sphere) and densities for the kernels."""
        centers = np.array([e.center for e in self.ellipsoids], dtype=np.float64)
        to_unit = np.array([(e.rotation / np.asarray(e.semi_axes)).T for e in self.ellipsoids], dtype=np.float64)
        densities = np.array([e.density for e in self.ellipsoids], dtype=np.float64)
        return centers, to_unit, densities


def default_phantom() -> Phantom:
    """Skull shell (0.5) around brain tissue (net 0.2) with three small round inserts."""
    return Phantom(ellipsoids=[
        Ellipsoid(semi_axes=(75.0, 95.0, 70.0), density=0.5),
        Ellipsoid(semi_axes=(68.0, 88.0, 63.0), density=-0.3),
        Ellipsoid(center=(-30.0, 20.0, 0.0), semi_axes=(12.0, 12.0, 12.0), density=0.1),
        Ellipsoid(center=(30.0, 20.0, 10.0), semi_axes=(10.0, 10.0, 10.0), density=-0.1),
        Ellipsoid(center=(0.0, -45.0, -5.0), semi_axes=(10.0, 10.0, 10.0), density=0.1),
    ])


def load_phantom(path: Union[str, Path]) -> Phantom:
    return Phantom.model_validate_json(Path(path).read_text())


def save_phantom(path: Union[str, Path], phantom: Phantom):
    Path(path).write_text(phantom.model_dump_json(indent=2))


@dataclass(frozen=True)
class ProjectionStack:
    data: np.ndarray
    geometry: CircularGeometry

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        det = self.geometry.detector
        expected = (self.geometry.n_views, det.nv, det.nu)
        if data.shape != expected:
            raise ShapeMismatchError(f'projection stack has shape {data.shape}, geometry expects {expected}')
        if not np.all(np.isfinite(data)):
            raise ValueError('projection stack contains non-finite values')
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)

    def scaled(self, factor: float) -> 'ProjectionStack':
        return ProjectionStack(self.data * np.float32(factor), self.geometry)


@dataclass(frozen=True)
class VolumeGrid:
    """Voxel-centre grid; ``origin`` is the centre of voxel (0, 0, 0)."""
    nx: int
    ny: int
    nz: int
    spacing: Vector3
    origin: Vector3

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValueError(f'grid dimensions must be positive, got {self.shape}')
        if min(self.spacing) <= 0:
            raise ValueError(f'voxel spacing must be positive, got {self.spacing}')
        object.__setattr__(self, 'spacing', tuple(float(s) for s in self.spacing))
        object.__setattr__(self, 'origin', tuple(float(o) for o in self.origin))

    @classmethod
    def centered(cls, shape: Sequence[int], spacing: Sequence[float]) -> 'VolumeGrid':
        """Grid whose voxel ``n // 2`` along every axis sits on the isocenter."""
        nx, ny, nz = (int(n) for n in shape)
        origin = tuple(-(n // 2) * s for n, s in zip((nx, ny, nz), spacing))
        return cls(nx, ny, nz, tuple(spacing), origin)

    @property
    def shape(self) -> Tuple[int, int, int]:
        """Array shape, z-major."""
        return self.nz, self.ny, self.nx

    @property
    def central_index(self) -> int:
        return int(round(-self.origin[2] / self.spacing[2]))

    def axes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(o + np.arange(n) * s for o, n, s in zip(self.origin, (self.nx, self.ny, self.nz), self.spacing))

    def central_slice(self) -> 'VolumeGrid':
        """Single axial plane at z = 0 with the in-plane sampling of this grid."""
        return VolumeGrid(self.nx, self.ny, 1, self.spacing, (self.origin[0], self.origin[1], 0.0))

    def points(self) -> np.ndarray:
        xs, ys, zs = self.axes()
        z, y, x = np.meshgrid(zs, ys, xs, indexing='ij')
        return np.stack([x, y, z], axis=-1)

    def corners(self) -> np.ndarray:
        xs, ys, zs = self.axes()
        return np.array([(x, y, z) for x in xs[[0, -1]] for y in ys[[0, -1]] for z in zs[[0, -1]]])


@dataclass(frozen=True)
class Volume:
    values: np.ndarray
    grid: VolumeGrid

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.shape != self.grid.shape:
            raise ShapeMismatchError(f'volume has shape {values.shape}, grid expects {self.grid.shape}')
        if not np.all(np.isfinite(values)):
            raise ValueError('volume contains non-finite values')
        object.__setattr__(self, 'values', values)

    def central_slice(self) -> np.ndarray:
        if self.grid.nz == 1:
            return self.values[0]
        return self.values[self.grid.central_index]


@njit(cache=True)
def _chord_sum(ox, oy, oz, dx, dy, dz, centers, to_unit, densities):
    total = 0.0
    for e in range(densities.shape[0]):
        px = ox - centers[e, 0]
        py = oy - centers[e, 1]
        pz = oz - centers[e, 2]
        # canonical frame: the ellipsoid becomes the unit sphere
        qx = to_unit[e, 0, 0] * px + to_unit[e, 0, 1] * py + to_unit[e, 0, 2] * pz
        qy = to_unit[e, 1, 0] * px + to_unit[e, 1, 1] * py + to_unit[e, 1, 2] * pz
        qz = to_unit[e, 2, 0] * px + to_unit[e, 2, 1] * py + to_unit[e, 2, 2] * pz
        ex = to_unit[e, 0, 0] * dx + to_unit[e, 0, 1] * dy + to_unit[e, 0, 2] * dz
        ey = to_unit[e, 1, 0] * dx + to_unit[e, 1, 1] * dy + to_unit[e, 1, 2] * dz
        ez = to_unit[e, 2, 0] * dx + to_unit[e, 2, 1] * dy + to_unit[e, 2, 2] * dz
        a = ex * ex + ey * ey + ez * ez
        b = 2.0 * (qx * ex + qy * ey + qz * ez)
        c = qx * qx + qy * qy + qz * qz - 1.0
        disc = b * b - 4.0 * a * c
        if disc <= 0.0:
            continue
        root = math.sqrt(disc)
        t0 = max((-b - root) / (2.0 * a), 0.0)
        t1 = (-b + root) / (2.0 * a)
        if t1 > t0:
            total += densities[e] * (t1 - t0)
    return total


@njit(parallel=True, cache=True)
def _project_kernel(centers_src, ray_maps, nv, nu, centers, to_unit, densities, out):
    n_views = centers_src.shape[0]
    for row in prange(n_views * nv):
        i = row // nv
        v = row % nv
        ox = centers_src[i, 0]
        oy = centers_src[i, 1]
        oz = centers_src[i, 2]
        M = ray_maps[i]
        for u in range(nu):
            dx = M[0, 0] * u + M[0, 1] * v + M[0, 2]
            dy = M[1, 0] * u + M[1, 1] * v + M[1, 2]
            dz = M[2, 0] * u + M[2, 1] * v + M[2, 2]
            norm = math.sqrt(dx * dx + dy * dy + dz * dz)
            out[i, v, u] = _chord_sum(ox, oy, oz, dx / norm, dy / norm, dz / norm, centers, to_unit, densities)


def line_integral(phantom: Phantom, origin: Sequence[float], direction: Sequence[float]) -> float:
    """Density-weighted chord length of the ray ``origin + t * direction``, ``t >= 0``."""
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != (3,) or abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError(f'ray direction must be a unit 3-vector, got {direction}')
    centers, to_unit, densities = phantom.packed()
    ox, oy, oz = (float(x) for x in origin)
    return float(_chord_sum(ox, oy, oz, *direction, centers, to_unit, densities))


def forward_project(phantom: Phantom, traj: Trajectory, motion: MotionTrajectory, noise_sigma: float = 0.0,
                    seed: int = None) -> ProjectionStack:
    """Line integrals through the phantom for every pixel of the effective cameras ``T_i @ M_i``."""
    views = normalize_projection(compose_trajectory(traj, motion).views)
    sources = camera_center(views)
    # rays through pixel (u, v): source + λ * inv(P3) @ (u, v, 1), λ > 0 in front of the source
    ray_maps = np.linalg.inv(views[:, :, :3])
    det = traj.geometry.detector
    if not np.all(np.isfinite(ray_maps)) or not np.all(np.isfinite(sources)):
        raise DegenerateProjectionError('cannot construct rays from the effective projection matrices')
    centers, to_unit, densities = phantom.packed()
    out = np.zeros((len(traj), det.nv, det.nu), dtype=np.float64)
    _project_kernel(sources, ray_maps, det.nv, det.nu, centers, to_unit, densities, out)
    if noise_sigma > 0:
        out += np.random.default_rng(seed).normal(0.0, noise_sigma, out.shape)
    return ProjectionStack(out.astype(np.float32), traj.geometry)


def voxelize(phantom: Phantom, grid: VolumeGrid) -> Volume:
    points = grid.points()
    values = np.zeros(grid.shape, dtype=np.float64)
    for ellipsoid in phantom.ellipsoids:
        values[ellipsoid.contains(points)] += ellipsoid.density
    return Volume(values.astype(np.float32), grid)


def support_mask(phantom: Phantom, grid: VolumeGrid) -> np.ndarray:
    points = grid.points()
    mask = np.zeros(grid.shape, dtype=bool)
    for ellipsoid in phantom.ellipsoids:
        mask |= ellipsoid.contains(points)
    return mask


def check_degenerate_depth(views: np.ndarray, points: np.ndarray):
    """Raise if any point sits on or behind the principal plane of any view."""
    xh = np.hstack([points, np.ones((len(points), 1))])
    w = np.einsum('nj,mj->nm', views[:, 2], xh)
    bad = np.argwhere(w <= DEGENERATE_WEIGHT)
    if len(bad):
        view, corner = (int(i) for i in bad[0])
        raise DegenerateProjectionError(f'grid corner {tuple(points[corner])} has no positive depth in view {view}',
                                        view=view, marker=corner)


def check_same_geometry(stack: ProjectionStack, traj: Trajectory):
    if stack.geometry != traj.geometry:
        raise GeometryError('projection stack and trajectory were built for different geometries')
