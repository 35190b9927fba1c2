import numpy as np
import pytest

from epifocus.consistency import RadonLUT
from epifocus.errors import FormatError
from epifocus.geometry import CircularGeometry, DetectorSpec
from epifocus.motion import MotionFamily, random_motion
from epifocus.phantom import ProjectionStack, Volume, VolumeGrid
from epifocus.utils.formats import METRICS_COLUMNS, decode_rpem, encode_rpem, read_pgm, read_rawl, read_rawp, \
    read_rawv, read_spline_csv, read_table, read_trajectory_csv, window_level, write_pgm, write_rawl, write_rawp, \
    write_rawv, write_spline_csv, write_table, write_trajectory_csv


@pytest.fixture
def stack(small_geometry):
    rng = np.random.default_rng(0)
    det = small_geometry.detector
    return ProjectionStack(rng.random((small_geometry.n_views, det.nv, det.nu)), small_geometry)


def test_projection_stack_file(tmp_path, stack):
    path = tmp_path / 'stack.rawp'
    write_rawp(path, stack)
    assert path.read_bytes().startswith(b'RAWP 36 48 64 ')
    loaded = read_rawp(path, stack.geometry)
    np.testing.assert_array_equal(loaded.data, stack.data)


def test_projection_stack_must_match_geometry(tmp_path, stack):
    path = tmp_path / 'stack.rawp'
    write_rawp(path, stack)
    other = CircularGeometry(sid=300.0, sdd=600.0, n_views=36, detector=DetectorSpec(nu=64, nv=48, du=1.0, dv=1.0))
    with pytest.raises(FormatError):
        read_rawp(path, other)


def test_truncated_projection_stack(tmp_path, stack):
    path = tmp_path / 'stack.rawp'
    write_rawp(path, stack)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_rawp(path, stack.geometry)


def test_wrong_magic(tmp_path, stack):
    path = tmp_path / 'stack.rawp'
    path.write_bytes(b'RAWV 1 1 1\n\x00\x00\x00\x00')
    with pytest.raises(FormatError):
        read_rawp(path, stack.geometry)


def test_malformed_header(tmp_path, stack):
    path = tmp_path / 'stack.rawp'
    path.write_bytes(b'RAWP 36 forty-eight 64 2.0 2.0\n')
    with pytest.raises(FormatError):
        read_rawp(path, stack.geometry)


def test_volume_file(tmp_path):
    grid = VolumeGrid(5, 4, 3, (0.5, 0.75, 2.0), (-1.0, -1.125, -2.0))
    volume = Volume(np.random.default_rng(1).normal(size=grid.shape), grid)
    path = tmp_path / 'volume.rawv'
    write_rawv(path, volume)
    loaded = read_rawv(path)
    assert loaded.grid == grid
    np.testing.assert_array_equal(loaded.values, volume.values)


def test_volume_header_needs_nine_fields(tmp_path):
    path = tmp_path / 'volume.rawv'
    path.write_bytes(b'RAWV 2 2 2 1.0 1.0 1.0\n' + bytes(32))
    with pytest.raises(FormatError):
        read_rawv(path)


def test_lut_file(tmp_path):
    lut = RadonLUT(np.random.default_rng(2).normal(size=(3, 16, 20)), 40.0)
    path = tmp_path / 'luts.rawl'
    write_rawl(path, lut)
    np.testing.assert_array_equal(read_rawl(path), lut.values)


def test_payload_is_little_endian_float32(tmp_path):
    lut = RadonLUT(np.full((1, 16, 16), 1.0), 10.0)
    path = tmp_path / 'luts.rawl'
    write_rawl(path, lut)
    payload = path.read_bytes().split(b'\n', 1)[1]
    assert payload[:4] == b'\x00\x00\x80\x3f'
    assert len(payload) == 4 * 256


def test_model_file_layout():
    tensors = [np.arange(6, dtype=np.float32).reshape(2, 3), np.array(2.5, dtype=np.float32)]
    content = encode_rpem(64, (8, 16), tensors)
    assert content[:4] == b'RPEM'
    assert int.from_bytes(content[4:6], 'little') == 1
    input_size, widths, decoded = decode_rpem(content)
    assert (input_size, widths) == (64, (8, 16))
    np.testing.assert_array_equal(decoded[0], tensors[0])
    assert decoded[1].shape == ()


@pytest.mark.parametrize('mutate, error', [
    (lambda c: b'XXXX' + c[4:], FormatError),
    (lambda c: c[:-1], FormatError),
    (lambda c: c + b'\x00', FormatError),
    (lambda c: c[:4] + (2).to_bytes(2, 'little') + c[6:], NotImplementedError),
])
def test_malformed_model_file(mutate, error):
    content = encode_rpem(8, (4,), [np.ones((2, 2), dtype=np.float32)])
    with pytest.raises(error):
        decode_rpem(mutate(content))


def test_trajectory_export(tmp_path, small_traj):
    path = tmp_path / 'trajectory.csv'
    write_trajectory_csv(path, small_traj)
    lines = path.read_text().splitlines()
    assert lines[0] == '# projmat 64 48 2.0 2.0'
    assert len(lines) == 37
    loaded = read_trajectory_csv(path)
    np.testing.assert_allclose(loaded.views, small_traj.views, rtol=1e-12, atol=1e-12)


def test_trajectory_needs_header(tmp_path):
    path = tmp_path / 'trajectory.csv'
    path.write_text('1,2,3\n')
    with pytest.raises(FormatError):
        read_trajectory_csv(path)


def test_spline_file(tmp_path):
    spline = random_motion(4, (3.0, 0.02), 8, MotionFamily.MIXED, 60)
    path = tmp_path / 'motion.csv'
    write_spline_csv(path, spline)
    assert path.read_text().splitlines()[0] == 'kind,view,rx,ry,rz,tx,ty,tz'
    loaded = read_spline_csv(path)
    assert loaded.kind == spline.kind
    np.testing.assert_array_equal(loaded.node_views, spline.node_views)
    np.testing.assert_array_equal(loaded.node_values, spline.node_values)


def test_spline_file_columns(tmp_path):
    path = tmp_path / 'motion.csv'
    path.write_text('view,rx\n0,0.0\n')
    with pytest.raises(FormatError):
        read_spline_csv(path)


def test_metrics_table_blank_cells(tmp_path):
    path = tmp_path / 'metrics.csv'
    rows = [{'dataset': 'phantom', 'method': 'proposed', 'ssim': 0.93, 'artifact_suppression': None}]
    write_table(path, rows, METRICS_COLUMNS)
    table = read_table(path)
    assert list(table.columns) == METRICS_COLUMNS
    assert table.loc[0, 'artifact_suppression'] == ''
    assert float(table.loc[0, 'ssim']) == 0.93


def test_window_level():
    grey = window_level(np.array([[-1.0, 0.0, 0.35, 0.7, 2.0]]), 0.35, 0.7)
    assert grey.tolist() == [[0, 0, 32768, 65535, 65535]]
    with pytest.raises(ValueError):
        window_level(np.zeros((2, 2)), 0.0, 0.0)


def test_pgm_file(tmp_path):
    image = np.linspace(0, 1, 12).reshape(3, 4)
    path = tmp_path / 'slice.pgm'
    write_pgm(path, image, 0.5, 1.0)
    assert path.read_bytes().startswith(b'P5\n4 3\n65535\n')
    np.testing.assert_array_equal(read_pgm(path), window_level(image, 0.5, 1.0))


def test_pgm_needs_16_bit_header(tmp_path):
    path = tmp_path / 'slice.pgm'
    path.write_bytes(b'P5\n2 2\n255\n' + bytes(4))
    with pytest.raises(FormatError):
        read_pgm(path)
