import re
from io import BytesIO
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import pandas as pd

from epifocus.constants import DTYPE_LE32, ENDIAN, PARAM_NAMES, RAWL_MAGIC, RAWP_MAGIC, RAWV_MAGIC, RPEM_MAGIC, \
    RPEM_VERSION, TRAJECTORY_HEADER
from epifocus.errors import FormatError

PathLike = Union[str, Path]

METRICS_COLUMNS = [
    'dataset', 'family', 'method', 'iqm', 'artifact_suppression', 'ssim_nocomp', 'ssim_entropy', 'ssim_proposed',
    'ssim', 'rmse', 'runtime_s', 'config_hash', 'seed', 'note',
]
TRAINING_LOG_COLUMNS = ['epoch', 'train_mse', 'val_mse', 'val_pearson_r']
SPLINE_COLUMNS = ['kind', 'view', *PARAM_NAMES]


def _write_raw(path: PathLike, header: str, values: np.ndarray):
    with open(path, 'wb') as f:
        f.write((header + '\n').encode('ascii'))
        f.write(np.ascontiguousarray(values, dtype=DTYPE_LE32).tobytes())


def _read_raw(path: PathLike, magic: str) -> Tuple[List[str], np.ndarray]:
    with open(path, 'rb') as f:
        header = f.readline().decode('ascii', errors='replace').split()
        payload = f.read()
    if not header or header[0] != magic:
        raise FormatError(f'{path}: expected {magic} header, got {" ".join(header[:1]) or "nothing"}')
    return header[1:], np.frombuffer(payload, dtype=DTYPE_LE32)


def _reshape(path: PathLike, values: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if values.size != int(np.prod(shape)):
        raise FormatError(f'{path}: payload holds {values.size} values, header announces {shape}')
    return values.reshape(shape).astype(np.float32)


def write_rawp(path: PathLike, stack):
    n_views, nv, nu = stack.data.shape
    det = stack.geometry.detector
    _write_raw(path, f'{RAWP_MAGIC} {n_views} {nv} {nu} {det.du!r} {det.dv!r}', stack.data)


def read_rawp(path: PathLike, geometry):
    from epifocus.phantom import ProjectionStack

    fields, values = _read_raw(path, RAWP_MAGIC)
    try:
        n_views, nv, nu = (int(x) for x in fields[:3])
        du, dv = (float(x) for x in fields[3:5])
    except ValueError as e:
        raise FormatError(f'{path}: malformed {RAWP_MAGIC} header') from e
    det = geometry.detector
    if (n_views, nv, nu) != (geometry.n_views, det.nv, det.nu) or not np.allclose((du, dv), (det.du, det.dv)):
        raise FormatError(f'{path}: stack {n_views}x{nv}x{nu} @ {du}x{dv} mm does not match the configured geometry')
    return ProjectionStack(_reshape(path, values, (n_views, nv, nu)), geometry)


def write_rawv(path: PathLike, volume):
    grid = volume.grid
    numbers = [grid.nx, grid.ny, grid.nz, *map(repr, grid.spacing), *map(repr, grid.origin)]
    _write_raw(path, ' '.join([RAWV_MAGIC, *map(str, numbers)]), volume.values)


def read_rawv(path: PathLike):
    from epifocus.phantom import Volume, VolumeGrid

    fields, values = _read_raw(path, RAWV_MAGIC)
    try:
        nx, ny, nz = (int(x) for x in fields[:3])
        spacing = tuple(float(x) for x in fields[3:6])
        origin = tuple(float(x) for x in fields[6:9])
    except ValueError as e:
        raise FormatError(f'{path}: malformed {RAWV_MAGIC} header') from e
    if len(spacing) != 3 or len(origin) != 3:
        raise FormatError(f'{path}: malformed {RAWV_MAGIC} header')
    grid = VolumeGrid(nx, ny, nz, spacing, origin)
    return Volume(_reshape(path, values, (nz, ny, nx)), grid)


def write_rawl(path: PathLike, lut):
    n_views, n_theta, n_s = lut.values.shape
    _write_raw(path, f'{RAWL_MAGIC} {n_views} {n_theta} {n_s}', lut.values)


def read_rawl(path: PathLike) -> np.ndarray:
    fields, values = _read_raw(path, RAWL_MAGIC)
    try:
        shape = tuple(int(x) for x in fields[:3])
    except ValueError as e:
        raise FormatError(f'{path}: malformed {RAWL_MAGIC} header') from e
    return _reshape(path, values, shape)


def encode_rpem(input_size: int, widths: Tuple[int, ...], tensors: List[np.ndarray]) -> bytes:
    stream = BytesIO()
    stream.write(RPEM_MAGIC)
    stream.write(RPEM_VERSION.to_bytes(2, ENDIAN))
    stream.write(input_size.to_bytes(2, ENDIAN))
    stream.write(len(widths).to_bytes(1, ENDIAN))
    for width in widths:
        stream.write(int(width).to_bytes(2, ENDIAN))
    stream.write(len(tensors).to_bytes(2, ENDIAN))
    for tensor in tensors:
        tensor = np.asarray(tensor)
        stream.write(tensor.ndim.to_bytes(1, ENDIAN))
        for dim in tensor.shape:
            stream.write(int(dim).to_bytes(4, ENDIAN))
        stream.write(np.ascontiguousarray(tensor, dtype=DTYPE_LE32).tobytes())
    return stream.getvalue()


def decode_rpem(content: bytes) -> Tuple[int, Tuple[int, ...], List[np.ndarray]]:
    stream = BytesIO(content)

    def read_int(size: int) -> int:
        chunk = stream.read(size)
        if len(chunk) != size:
            raise FormatError('truncated RPEM model file')
        return int.from_bytes(chunk, ENDIAN)

    if stream.read(4) != RPEM_MAGIC:
        raise FormatError('not an RPEM model file')
    version = read_int(2)
    if version != RPEM_VERSION:
        raise NotImplementedError(f'RPEM version {version}')
    input_size = read_int(2)
    widths = tuple(read_int(2) for _ in range(read_int(1)))
    tensors = []
    for _ in range(read_int(2)):
        shape = tuple(read_int(4) for _ in range(read_int(1)))
        count = int(np.prod(shape)) if shape else 1
        payload = stream.read(4 * count)
        if len(payload) != 4 * count:
            raise FormatError('truncated RPEM model file')
        tensors.append(np.frombuffer(payload, dtype=DTYPE_LE32).reshape(shape).astype(np.float32))
    if stream.read(1):
        raise FormatError('trailing bytes after RPEM tensors')
    return input_size, widths, tensors


def write_trajectory_csv(path: PathLike, traj):
    det = traj.geometry.detector
    table = pd.DataFrame(traj.views.reshape(len(traj), 12), columns=[f'p{r}{c}' for r in range(3) for c in range(4)])
    with open(path, 'w', newline='') as f:
        f.write(f'{TRAJECTORY_HEADER} {det.nu} {det.nv} {det.du!r} {det.dv!r}\n')
        table.to_csv(f, index=False, header=False, float_format='%.17g')


def read_trajectory_csv(path: PathLike):
    from epifocus.geometry import Trajectory, geometry_from_views

    with open(path) as f:
        header = f.readline()
    if not header.startswith(TRAJECTORY_HEADER):
        raise FormatError(f'{path}: missing "{TRAJECTORY_HEADER}" header')
    try:
        nu, nv = (int(x) for x in header.split()[2:4])
        du, dv = (float(x) for x in header.split()[4:6])
    except ValueError as e:
        raise FormatError(f'{path}: malformed trajectory header') from e
    table = pd.read_csv(path, skiprows=1, header=None, dtype=np.float64)
    if table.shape[1] != 12:
        raise FormatError(f'{path}: expected 12 matrix entries per row, got {table.shape[1]}')
    views = table.to_numpy().reshape(-1, 3, 4)
    return Trajectory(views, geometry_from_views(views, nu, nv, du, dv))


def write_spline_csv(path: PathLike, spline):
    table = pd.DataFrame(spline.node_values, columns=list(PARAM_NAMES))
    table.insert(0, 'view', spline.node_views)
    table.insert(0, 'kind', spline.kind.value)
    table.to_csv(path, index=False, float_format='%.17g')


def read_spline_csv(path: PathLike):
    from epifocus.motion import MotionSpline, SplineKind

    table = pd.read_csv(path)
    if list(table.columns) != SPLINE_COLUMNS:
        raise FormatError(f'{path}: expected columns {SPLINE_COLUMNS}')
    kinds = table['kind'].unique()
    if len(kinds) != 1:
        raise FormatError(f'{path}: a spline file holds exactly one spline kind')
    return MotionSpline(SplineKind(kinds[0]), table['view'].to_numpy(dtype=int),
                        table[list(PARAM_NAMES)].to_numpy(dtype=np.float64))


def write_table(path: PathLike, rows: List[dict], columns: List[str]):
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, na_rep='', float_format='%.10g')


def read_table(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, keep_default_na=False)


def window_level(image: np.ndarray, level: float, width: float) -> np.ndarray:
    """Map intensities to 16-bit grey values: ``[level - width/2, level + width/2]`` spans the full range."""
    if width <= 0:
        raise ValueError('window width must be positive')
    scaled = np.clip((np.asarray(image, dtype=np.float64) - (level - width / 2)) / width, 0, 1)
    return np.round(scaled * 65535).astype('>u2')


def write_pgm(path: PathLike, image: np.ndarray, level: float, width: float):
    grey = window_level(image, level, width)
    rows, cols = grey.shape
    with open(path, 'wb') as f:
        f.write(f'P5\n{cols} {rows}\n65535\n'.encode('ascii'))
        f.write(grey.tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    with open(path, 'rb') as f:
        content = f.read()
    match = re.match(rb'P5\s+(\d+)\s+(\d+)\s+65535\s', content)
    if match is None:
        raise FormatError(f'{path}: not a 16-bit binary PGM')
    cols, rows = int(match.group(1)), int(match.group(2))
    return np.frombuffer(content[match.end():match.end() + 2 * rows * cols], dtype='>u2').reshape(rows, cols)
