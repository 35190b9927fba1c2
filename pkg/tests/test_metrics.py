import math

import numpy as np
import pytest

from epifocus.errors import ShapeMismatchError, UndefinedBaselineError
from epifocus.metrics import artifact_suppression, evaluation_mask, fill_method_columns, metrics_row, rmse, ssim
from epifocus.phantom import Volume, VolumeGrid, support_mask


def naive_ssim(a, b, window, data_range, k1=0.01, k2=0.03):
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    scores = []
    for i in range(a.shape[0] - window + 1):
        for j in range(a.shape[1] - window + 1):
            x = a[i:i + window, j:j + window].ravel()
            y = b[i:i + window, j:j + window].ravel()
            mx, my = x.mean(), y.mean()
            vx = ((x - mx) ** 2).mean()
            vy = ((y - my) ** 2).mean()
            cov = ((x - mx) * (y - my)).mean()
            scores.append((2 * mx * my + c1) * (2 * cov + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(scores))


def volume(values):
    values = np.asarray(values, dtype=np.float32)
    nz, ny, nx = values.shape
    return Volume(values, VolumeGrid.centered((nx, ny, nz), (1.0, 1.0, 1.0)))


def test_rmse_identical_is_zero():
    a = np.random.default_rng(0).normal(size=(8, 8))
    assert rmse(a, a) == 0.0


def test_rmse_constant_offset():
    a = np.random.default_rng(1).normal(size=(6, 7))
    assert rmse(a, a - 0.75) == pytest.approx(0.75, rel=1e-12)


def test_rmse_matches_two_pass_oracle():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(5, 9, 9)), rng.normal(size=(5, 9, 9))
    mask = rng.random((5, 9, 9)) > 0.4
    total, count = 0.0, 0
    for x, y, m in zip(a.ravel(), b.ravel(), mask.ravel()):
        if m:
            total += (x - y) ** 2
            count += 1
    assert rmse(a, b, mask) == pytest.approx(math.sqrt(total / count), abs=1e-10)


def test_rmse_accepts_volumes():
    a = volume(np.ones((3, 4, 4)))
    b = volume(np.zeros((3, 4, 4)))
    assert rmse(a, b) == 1.0


def test_rmse_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        rmse(np.zeros((4, 4)), np.zeros((4, 5)))


def test_rmse_empty_mask():
    with pytest.raises(ValueError):
        rmse(np.zeros((4, 4)), np.ones((4, 4)), np.zeros((4, 4), dtype=bool))


def test_ssim_of_identical_slices_is_one():
    a = np.random.default_rng(3).normal(size=(32, 32))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_is_symmetric():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(20, 24)), rng.normal(size=(20, 24))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_matches_window_oracle():
    rng = np.random.default_rng(5)
    for _ in range(3):
        a = rng.random((32, 32))
        b = a + 0.2 * rng.normal(size=(32, 32))
        assert ssim(a, b, data_range=1.0) == pytest.approx(naive_ssim(a, b, 8, 1.0), abs=1e-9)


def test_ssim_range():
    rng = np.random.default_rng(6)
    for _ in range(5):
        value = ssim(rng.normal(size=(16, 16)), rng.normal(size=(16, 16)))
        assert -1.0 <= value <= 1.0


def test_ssim_rejects_small_or_3d_inputs():
    with pytest.raises(ShapeMismatchError):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)))
    with pytest.raises(ShapeMismatchError):
        ssim(np.zeros((2, 16, 16)), np.zeros((2, 16, 16)))


@pytest.mark.parametrize('uncomp, comp, expected', [(3.0, 3.0, 0.0), (2.5, 0.0, 100.0), (10.0, 1.0, 90.0),
                                                    (1.0, 1.5, -50.0)])
def test_artifact_suppression(uncomp, comp, expected):
    assert artifact_suppression(uncomp, comp) == pytest.approx(expected)


def test_artifact_suppression_needs_baseline():
    with pytest.raises(UndefinedBaselineError):
        artifact_suppression(0.0, 0.0)


def test_evaluation_mask_is_dilated_support(small_phantom, small_grid):
    support = support_mask(small_phantom, small_grid)
    mask = evaluation_mask(small_phantom, small_grid, dilation=2)
    assert np.all(mask[support])
    assert mask.sum() > support.sum()
    np.testing.assert_array_equal(evaluation_mask(small_phantom, small_grid, dilation=0), support)


def test_metrics_row():
    rng = np.random.default_rng(7)
    reference = rng.random((3, 16, 16))
    uncompensated = reference + 0.3 * rng.normal(size=reference.shape)
    compensated = reference + 0.1 * rng.normal(size=reference.shape)
    mask = np.ones(reference.shape, dtype=bool)
    row = metrics_row('phantom', 'in_plane', 'proposed', 'regressor', volume(reference), volume(uncompensated),
                      volume(compensated), mask, runtime_s=1.5, config_hash='abc', seed=3)
    assert row['artifact_suppression'] > 0
    assert row['ssim'] > row['ssim_nocomp']
    assert row['rmse'] == pytest.approx(rmse(volume(compensated), volume(reference)))
    assert (row['runtime_s'], row['config_hash'], row['seed'], row['note']) == (1.5, 'abc', 3, '')


def test_metrics_row_without_motion_leaves_suppression_blank():
    reference = volume(np.random.default_rng(8).random((3, 16, 16)))
    row = metrics_row('phantom', 'in_plane', 'entropy', 'entropy', reference, reference, reference,
                      np.ones((3, 16, 16), dtype=bool))
    assert row['artifact_suppression'] is None
    assert 'undefined' in row['note']
    assert row['ssim'] == pytest.approx(1.0)


def test_fill_method_columns():
    rows = [{'method': 'entropy', 'ssim': 0.8}, {'method': 'proposed', 'ssim': 0.9}, {'method': 'oracle', 'ssim': 0.95}]
    filled = fill_method_columns(rows)
    assert all(row['ssim_entropy'] == 0.8 and row['ssim_proposed'] == 0.9 for row in filled)
