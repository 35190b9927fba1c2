import json
from pathlib import Path
from typing import Optional, Union

from epifocus.errors import FormatError
from epifocus.utils.general import CustomJSONEncoder, file_sha256, get_logger

logger = get_logger('storage')


class ExperimentStore:
    """Output directory of one experiment; every artifact is listed in ``manifest.json``."""

    def __init__(self):
        self.out_dir = None
        self.config_hash = None
        self.seed = None
        self.manifest_file = None
        self.config_file = None
        self.phantom_file = None
        self.trajectory_file = None
        self.true_spline_file = None
        self.clean_stack_file = None
        self.motion_stack_file = None
        self.ground_truth_file = None
        self.reference_file = None
        self.uncompensated_file = None
        self.luts_file = None
        self.model_file = None
        self.training_log_file = None
        self.metrics_file = None
        self.images_dir = None
        self._manifest = {}

    @staticmethod
    def create(out_dir: Union[str, Path] = './data/experiment', config_hash: str = None, seed: int = None,
               model_file: Union[str, Path] = None) -> 'ExperimentStore':
        self = ExperimentStore()
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config_hash = config_hash
        self.seed = seed

        self.manifest_file = self.out_dir / 'manifest.json'
        self.config_file = self.out_dir / 'config.json'
        self.phantom_file = self.out_dir / 'phantom.json'
        self.trajectory_file = self.out_dir / 'trajectory.csv'
        self.true_spline_file = self.out_dir / 'motion_true.csv'
        self.clean_stack_file = self.out_dir / 'stack_clean.rawp'
        self.motion_stack_file = self.out_dir / 'stack_motion.rawp'
        self.ground_truth_file = self.out_dir / 'ground_truth.rawv'
        self.reference_file = self.out_dir / 'recon_reference.rawv'
        self.uncompensated_file = self.out_dir / 'recon_uncompensated.rawv'
        self.luts_file = self.out_dir / 'luts.rawl'
        self.model_file = Path(model_file) if model_file else self.out_dir / 'regressor.rpem'
        self.training_log_file = self.out_dir / 'training_log.csv'
        self.metrics_file = self.out_dir / 'metrics.csv'
        self.images_dir = self.out_dir / 'images'

        self._manifest = self._load_from_file(self.manifest_file)
        return self

    def compensated_file(self, method: str) -> Path:
        return self.out_dir / f'recon_{method}.rawv'

    def report_file(self, method: str) -> Path:
        return self.out_dir / f'report_{method}.json'

    def spline_file(self, method: str) -> Path:
        return self.out_dir / f'motion_{method}.csv'

    def image_file(self, name: str) -> Path:
        self.images_dir.mkdir(exist_ok=True)
        return self.images_dir / f'{name}.pgm'

    def _save_to_file(self, file_path: Path, data):
        with open(file_path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, sort_keys=True, cls=CustomJSONEncoder)

    def _load_from_file(self, file_path: Path) -> dict:
        if not file_path.exists():
            return {}
        try:
            with open(file_path, encoding='utf-8') as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f'{file_path}: unreadable JSON ({e})') from e

    def save_json(self, file_path: Path, data, kind: str):
        self._save_to_file(file_path, data)
        self.record(file_path, kind)

    def load_json(self, file_path: Path) -> dict:
        if not file_path.exists():
            raise FileNotFoundError(file_path)
        return self._load_from_file(file_path)

    def _key(self, file_path: Path) -> str:
        path = Path(file_path).resolve()
        root = self.out_dir.resolve()
        return path.relative_to(root).as_posix() if path.is_relative_to(root) else str(path)

    def record(self, file_path: Path, kind: str):
        """Registers a written artifact with the run's config hash, seed and content digest."""
        key = self._key(file_path)
        self._manifest[key] = {
            'kind': kind,
            'config_hash': self.config_hash,
            'seed': self.seed,
            'sha256': file_sha256(file_path),
        }
        self._save_to_file(self.manifest_file, self._manifest)
        logger.debug(f'wrote {kind} {key}')

    def entry(self, file_path: Path) -> Optional[dict]:
        return self._manifest.get(self._key(file_path))

    def verify(self, file_path: Path) -> bool:
        entry = self.entry(file_path)
        return entry is not None and Path(file_path).exists() and entry['sha256'] == file_sha256(file_path)

    @property
    def manifest(self) -> dict:
        return dict(self._manifest)
