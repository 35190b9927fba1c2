import json

import numpy as np
import pytest

from epifocus.errors import FormatError
from epifocus.storage import ExperimentStore


@pytest.fixture
def store(tmp_path):
    return ExperimentStore.create(tmp_path / 'run', config_hash='c0ffee', seed=7)


def test_layout(store, tmp_path):
    assert store.out_dir == tmp_path / 'run'
    assert store.out_dir.is_dir()
    assert store.motion_stack_file.name == 'stack_motion.rawp'
    assert store.compensated_file('proposed').name == 'recon_proposed.rawv'
    assert store.report_file('entropy').name == 'report_entropy.json'
    assert store.spline_file('oracle').name == 'motion_oracle.csv'
    assert store.image_file('reference').parent.is_dir()
    assert store.manifest == {}


def test_record_and_verify(store):
    path = store.out_dir / 'notes.txt'
    path.write_text('seed 7')
    store.record(path, 'notes')
    entry = store.entry(path)
    assert entry['kind'] == 'notes'
    assert (entry['config_hash'], entry['seed']) == ('c0ffee', 7)
    assert store.verify(path)
    path.write_text('seed 8')
    assert not store.verify(path)


def test_unrecorded_or_missing_files_do_not_verify(store):
    path = store.out_dir / 'other.txt'
    path.write_text('x')
    assert not store.verify(path)
    store.record(path, 'other')
    path.unlink()
    assert not store.verify(path)


def test_manifest_survives_reopening(store):
    store.save_json(store.report_file('proposed'), {'converged': True, 'trace': np.array([3.0, 2.0])}, 'report')
    reopened = ExperimentStore.create(store.out_dir)
    assert 'report_proposed.json' in reopened.manifest
    assert reopened.load_json(store.report_file('proposed')) == {'converged': True, 'trace': [3.0, 2.0]}
    manifest = json.loads(store.manifest_file.read_text())
    assert manifest['report_proposed.json']['kind'] == 'report'


def test_external_model_file_keeps_absolute_key(store, tmp_path):
    model = tmp_path / 'models' / 'regressor.rpem'
    model.parent.mkdir()
    model.write_bytes(b'RPEM')
    store.record(model, 'model')
    assert str(model.resolve()) in store.manifest


def test_missing_json(store):
    with pytest.raises(FileNotFoundError):
        store.load_json(store.out_dir / 'nothing.json')


def test_corrupt_manifest(tmp_path):
    out = tmp_path / 'run'
    out.mkdir()
    (out / 'manifest.json').write_text('{')
    with pytest.raises(FormatError):
        ExperimentStore.create(out)
