"""Experiment configuration: one validated JSON document per run plus environment overrides."""
import json
import os
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from epifocus.constants import ECC_KAPPA_SAMPLES, ECC_PAIR_STRIDE, ECC_SMOOTHING_PX, ECC_THETA_SAMPLES, \
    ESTIMATION_NODES, MIN_TRAINING_SAMPLES, PARAM_NAMES, REGRESSOR_INPUT, SIMULATION_NODES
from epifocus.errors import ConfigError
from epifocus.geometry import CircularGeometry, DetectorSpec
from epifocus.iqm.kinds import IqmKind
from epifocus.motion import MotionFamily, SplineKind
from epifocus.phantom import VolumeGrid
from epifocus.recon import FilterMethod
from epifocus.utils.general import canonical_json, physical_cores, sha256


class Method(str, Enum):
    ENTROPY = 'entropy'
    PROPOSED = 'proposed'
    ORACLE = 'oracle'
    NO_ECC = 'no_ecc'


def default_geometry() -> CircularGeometry:
    return CircularGeometry(sid=750.0, sdd=1200.0, n_views=180,
                            detector=DetectorSpec(nu=200, nv=128, du=2.4, dv=2.4))


class GridConfig(BaseModel):
    shape: Tuple[int, int, int] = (128, 128, 64)
    spacing: Tuple[float, float, float] = (1.75, 1.75, 2.0)

    @field_validator('shape')
    @classmethod
    def _positive_shape(cls, value):
        if min(value) < 1:
            raise ValueError('grid dimensions must be positive')
        return value

    @field_validator('spacing')
    @classmethod
    def _positive_spacing(cls, value):
        if min(value) <= 0:
            raise ValueError('voxel spacing must be positive')
        return value

    def build(self) -> VolumeGrid:
        return VolumeGrid.centered(self.shape, self.spacing)


class SimulationConfig(BaseModel):
    family: MotionFamily = MotionFamily.IN_PLANE
    amplitude_mm: float = Field(default=5.0, ge=0)
    amplitude_deg: float = Field(default=2.0, ge=0)
    n_nodes: int = Field(default=SIMULATION_NODES, ge=5)
    spline_kind: SplineKind = SplineKind.AKIMA
    noise_sigma: float = Field(default=0.0, ge=0)


class BlockSchedule(BaseModel):
    block_size: int = Field(default=3, ge=1)
    max_sweeps: int = Field(default=5, ge=1)
    epsilon: float = Field(default=1e-3, gt=0)
    max_evals_per_block: int = Field(default=200, ge=10)
    simplex_tol: float = Field(default=1e-6, gt=0)


class EstimationConfig(BaseModel):
    n_nodes: int = Field(default=ESTIMATION_NODES, ge=3)
    spline_kind: SplineKind = SplineKind.PCHIP
    filter_method: FilterMethod = FilterMethod.FFT
    schedule: BlockSchedule = BlockSchedule()

    @model_validator(mode='after')
    def _block_fits(self):
        if self.schedule.block_size > self.n_nodes:
            raise ValueError(f'block size {self.schedule.block_size} exceeds {self.n_nodes} nodes')
        return self


class EccSettings(BaseModel):
    n_theta: int = Field(default=ECC_THETA_SAMPLES, ge=16)
    n_s: Optional[int] = Field(default=None, ge=16)
    n_kappa: int = Field(default=ECC_KAPPA_SAMPLES, ge=1)
    pair_stride: int = Field(default=ECC_PAIR_STRIDE, ge=1)
    max_separation_deg: float = Field(default=90.0, gt=0, le=180)
    cone_weight: bool = False
    smoothing_px: float = Field(default=ECC_SMOOTHING_PX, ge=0)


class ObjectiveConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    iqm_kind: IqmKind = IqmKind.REGRESSOR
    lambda_: Optional[float] = Field(default=None, ge=0, alias='lambda')
    active_params: List[str] = list(PARAM_NAMES)

    @field_validator('active_params')
    @classmethod
    def _known_params(cls, value):
        if not value:
            raise ValueError('at least one motion parameter must be active')
        unknown = sorted(set(value) - set(PARAM_NAMES))
        if unknown:
            raise ValueError(f'unknown motion parameters {unknown}')
        return [name for name in PARAM_NAMES if name in value]


class TrainingConfig(BaseModel):
    n_samples: int = Field(default=500, ge=MIN_TRAINING_SAMPLES)
    epochs: int = Field(default=30, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    batch_size: int = Field(default=32, ge=1)
    val_fraction: float = Field(default=0.2, ge=0.2, lt=1)
    optimizer: str = Field(default='adam', pattern='^(adam|sgd)$')
    amplitude_range: Tuple[float, float] = (0.0, 2.0)
    families: List[MotionFamily] = [MotionFamily.IN_PLANE, MotionFamily.OUT_PLANE]
    slice_size: int = Field(default=REGRESSOR_INPUT, ge=8)
    model_path: Optional[str] = None

    @field_validator('amplitude_range')
    @classmethod
    def _ordered_range(cls, value):
        if value[0] < 0 or value[1] < value[0]:
            raise ValueError(f'amplitude range must satisfy 0 <= low <= high, got {value}')
        return value


class EvaluationConfig(BaseModel):
    mask_dilation: int = Field(default=5, ge=0)
    ssim_window: int = Field(default=8, ge=2)
    bone_level: float = 0.35
    bone_width: float = Field(default=0.7, gt=0)
    difference_level: float = 0.2
    difference_width: float = Field(default=0.4, gt=0)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    name: str = 'default'
    dataset: str = 'phantom'
    seed: int = Field(default=0, ge=0)
    deterministic: bool = True
    geometry: CircularGeometry = Field(default_factory=default_geometry)
    grid: GridConfig = GridConfig()
    phantom_path: Optional[str] = None
    simulation: SimulationConfig = SimulationConfig()
    estimation: EstimationConfig = EstimationConfig()
    objective: ObjectiveConfig = ObjectiveConfig()
    ecc: EccSettings = EccSettings()
    training: TrainingConfig = TrainingConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    methods: List[Method] = [Method.ENTROPY, Method.PROPOSED]

    @model_validator(mode='after')
    def _distinct_splines(self):
        if self.simulation.spline_kind == self.estimation.spline_kind:
            raise ValueError(f'simulation and estimation both use {self.simulation.spline_kind.value} splines')
        if self.estimation.n_nodes > self.geometry.n_views:
            raise ValueError(f'{self.estimation.n_nodes} estimation nodes exceed {self.geometry.n_views} views')
        return self

    def needs_regressor(self) -> bool:
        uses_configured = any(m in (Method.PROPOSED, Method.NO_ECC) for m in self.methods)
        return uses_configured and self.objective.iqm_kind == IqmKind.REGRESSOR


def format_validation_error(error: ValidationError) -> str:
    return '; '.join(f'{".".join(str(part) for part in e["loc"]) or "<root>"}: {e["msg"]}' for e in error.errors())


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e)) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f'config file not found: {path}')
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f'{path}: invalid JSON ({e})') from e
    return parse_config(data)


def config_hash(config: ExperimentConfig) -> str:
    return sha256(canonical_json(config.model_dump(mode='json', by_alias=True)))


class RuntimeSettings(BaseModel):
    workers: int = Field(default_factory=physical_cores, ge=1)
    deterministic: Optional[bool] = None
    log_level: str = Field(default='INFO', pattern='^(DEBUG|INFO|WARNING|ERROR)$')


def load_runtime_settings(env_file: Union[str, Path] = '.env') -> RuntimeSettings:
    """``EPIFOCUS_*`` values from the dotenv file, overridden by the process environment."""
    values = {**dotenv_values(env_file), **os.environ}
    data = {}
    if values.get('EPIFOCUS_WORKERS'):
        data['workers'] = values['EPIFOCUS_WORKERS']
    if values.get('EPIFOCUS_DETERMINISTIC'):
        data['deterministic'] = values['EPIFOCUS_DETERMINISTIC']
    if values.get('EPIFOCUS_LOG_LEVEL'):
        data['log_level'] = values['EPIFOCUS_LOG_LEVEL'].upper()
    try:
        return RuntimeSettings.model_validate(data)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e)) from e
