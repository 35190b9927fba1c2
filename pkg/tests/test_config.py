import json
from pathlib import Path

import pytest

from epifocus.config import ExperimentConfig, Method, config_hash, load_config, load_runtime_settings, parse_config
from epifocus.errors import ConfigError
from epifocus.iqm import IqmKind
from epifocus.motion import SplineKind

CONFIGS = Path(__file__).resolve().parent.parent / 'configs'


@pytest.fixture
def clean_env(monkeypatch):
    for name in ('EPIFOCUS_WORKERS', 'EPIFOCUS_DETERMINISTIC', 'EPIFOCUS_LOG_LEVEL'):
        monkeypatch.delenv(name, raising=False)
    return monkeypatch


def test_defaults():
    config = parse_config({})
    assert config.simulation.spline_kind == SplineKind.AKIMA
    assert config.estimation.spline_kind == SplineKind.PCHIP
    assert config.objective.lambda_ is None
    assert config.geometry.n_views == 180
    assert config.grid.build().shape == (64, 128, 128)
    assert config.methods == [Method.ENTROPY, Method.PROPOSED]
    assert config.needs_regressor()


def test_error_names_the_field():
    with pytest.raises(ConfigError) as info:
        parse_config({'estimation': {'schedule': {'block_size': 0}}})
    assert 'estimation.schedule.block_size' in str(info.value)


def test_simulation_and_estimation_splines_differ():
    with pytest.raises(ConfigError) as info:
        parse_config({'simulation': {'spline_kind': 'pchip'}})
    assert 'pchip' in str(info.value)


def test_block_must_fit_nodes():
    with pytest.raises(ConfigError):
        parse_config({'estimation': {'n_nodes': 4, 'schedule': {'block_size': 5}}})


def test_training_needs_fifty_samples():
    with pytest.raises(ConfigError) as info:
        parse_config({'training': {'n_samples': 49}})
    assert 'training.n_samples' in str(info.value)


@pytest.mark.parametrize('objective', [{'lambda': -0.5}, {'active_params': []}, {'active_params': ['tw']},
                                       {'iqm_kind': 'sharpness'}])
def test_objective_validation(objective):
    with pytest.raises(ConfigError):
        parse_config({'objective': objective})


def test_lambda_alias_and_parameter_order():
    config = parse_config({'objective': {'lambda': 0.25, 'active_params': ['ty', 'rz', 'tx'],
                                         'iqm_kind': 'oracle_rpe'}})
    assert config.objective.lambda_ == 0.25
    assert config.objective.active_params == ['rz', 'tx', 'ty']
    assert not config.needs_regressor()
    assert config.model_dump(by_alias=True)['objective']['lambda'] == 0.25


def test_shipped_configs_load():
    names = sorted(p.stem for p in CONFIGS.glob('*.json'))
    assert 'default' in names
    for name in names:
        config = load_config(CONFIGS / f'{name}.json')
        assert config.name == name


def test_missing_and_invalid_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'missing.json')
    path = tmp_path / 'broken.json'
    path.write_text('{"seed": ')
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_hash_is_stable(tmp_path):
    config = parse_config({'seed': 4, 'objective': {'iqm_kind': 'entropy'}})
    path = tmp_path / 'config.json'
    path.write_text(json.dumps(config.model_dump(mode='json', by_alias=True)))
    assert config_hash(load_config(path)) == config_hash(config)
    assert config_hash(config) != config_hash(parse_config({'seed': 5, 'objective': {'iqm_kind': 'entropy'}}))
    assert len(config_hash(config)) == 64


def test_runtime_settings_from_environment(clean_env, tmp_path):
    clean_env.setenv('EPIFOCUS_WORKERS', '3')
    clean_env.setenv('EPIFOCUS_LOG_LEVEL', 'debug')
    clean_env.setenv('EPIFOCUS_DETERMINISTIC', 'false')
    settings = load_runtime_settings(tmp_path / '.env')
    assert settings.workers == 3
    assert settings.log_level == 'DEBUG'
    assert settings.deterministic is False


def test_runtime_settings_from_dotenv(clean_env, tmp_path):
    env_file = tmp_path / '.env'
    env_file.write_text('EPIFOCUS_WORKERS=2\n')
    assert load_runtime_settings(env_file).workers == 2
    clean_env.setenv('EPIFOCUS_WORKERS', '5')
    assert load_runtime_settings(env_file).workers == 5


def test_runtime_settings_defaults(clean_env, tmp_path):
    settings = load_runtime_settings(tmp_path / '.env')
    assert settings.workers >= 1
    assert settings.deterministic is None
    assert settings.log_level == 'INFO'


@pytest.mark.parametrize('name, value', [('EPIFOCUS_WORKERS', '0'), ('EPIFOCUS_WORKERS', 'many'),
                                         ('EPIFOCUS_LOG_LEVEL', 'chatty')])
def test_runtime_settings_validation(clean_env, tmp_path, name, value):
    clean_env.setenv(name, value)
    with pytest.raises(ConfigError):
        load_runtime_settings(tmp_path / '.env')


def test_out_of_plane_suite_uses_slice_metric_with_consistency():
    config = load_config(CONFIGS / 'out_plane.json')
    assert config.objective.iqm_kind == IqmKind.ENTROPY
    assert config.objective.lambda_ is None
    assert config.objective.active_params == ['rx', 'ry', 'tz']
    assert Method.NO_ECC in config.methods


def test_default_config_file_matches_model_defaults():
    config = load_config(CONFIGS / 'default.json')
    assert isinstance(config, ExperimentConfig)
    assert config.objective.iqm_kind == IqmKind.REGRESSOR
    assert config.estimation.n_nodes == 7
