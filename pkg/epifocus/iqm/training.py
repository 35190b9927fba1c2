import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import torch
from torch import nn
from torch.func import functional_call
from torch.utils.data import DataLoader, TensorDataset

from epifocus.constants import MIN_TRAINING_SAMPLES, REGRESSOR_INPUT, REGRESSOR_WIDTHS
from epifocus.errors import ConfigError, TrainingError
from epifocus.geometry import MotionTrajectory, Trajectory, default_markers, rpe
from epifocus.iqm.regressor import RpeRegressor, prepare_slice
from epifocus.motion import MotionFamily, random_motion, sample_motion
from epifocus.phantom import Phantom, VolumeGrid, forward_project
from epifocus.recon import ReconMode, fdk

logger = logging.getLogger('epifocus.iqm.training')


@dataclass(frozen=True)
class TrainingSample:
    slice: np.ndarray
    label: float
    mean: float
    std: float


@dataclass
class TrainingHistory:
    rows: List[dict] = field(default_factory=list)

    def append(self, epoch: int, train_mse: float, val_mse: float, val_pearson_r: float):
        self.rows.append({'epoch': epoch, 'train_mse': train_mse, 'val_mse': val_mse, 'val_pearson_r': val_pearson_r})

    def __len__(self):
        return len(self.rows)

    @property
    def last(self) -> dict:
        return self.rows[-1]


@dataclass
class TrainingResult:
    model: RpeRegressor
    history: TrainingHistory
    val_predictions: np.ndarray
    val_labels: np.ndarray


def _simulate_sample(seed_seq: np.random.SeedSequence, phantom: Phantom, traj: Trajectory, grid: VolumeGrid,
                     amplitude: Tuple[float, float], amplitude_range: Tuple[float, float],
                     families: Sequence[MotionFamily], n_nodes: int, markers: np.ndarray,
                     slice_size: int) -> TrainingSample:
    rng = np.random.default_rng(seed_seq)
    scale = rng.uniform(*amplitude_range)
    family = families[int(rng.integers(len(families)))]
    spline = random_motion(int(rng.integers(2 ** 32)), (amplitude[0] * scale, amplitude[1] * scale), n_nodes, family,
                           len(traj))
    motion = sample_motion(spline, len(traj))
    stack = forward_project(phantom, traj, motion)
    recon = fdk(stack, traj, MotionTrajectory.identity(len(traj)), grid, ReconMode.CENTRAL_SLICE)
    raw = recon.central_slice()
    return TrainingSample(prepare_slice(raw, slice_size), rpe(traj, motion, markers), float(raw.mean()),
                          float(raw.std()))


def build_training_set(seed: int, n_samples: int, amplitude_range: Tuple[float, float], *, phantom: Phantom,
                       traj: Trajectory, grid: VolumeGrid, amplitude: Tuple[float, float],
                       families: Sequence[MotionFamily] = tuple(MotionFamily), n_nodes: int = 10,
                       markers: np.ndarray = None, slice_size: int = REGRESSOR_INPUT) -> List[TrainingSample]:
    """Random Akima motion, simulated acquisition, uncompensated central slice and its RPE label per sample.

    ``amplitude`` is the (mm, radians) bound scaled per sample by a factor drawn from ``amplitude_range``.
    """
    lo, hi = amplitude_range
    if lo < 0 or hi < lo:
        raise ValueError(f'invalid amplitude range {amplitude_range}')
    markers = default_markers() if markers is None else markers
    families = [MotionFamily(f) for f in families]
    samples = [
        _simulate_sample(s, phantom, traj, grid, amplitude, (lo, hi), families, n_nodes, markers, slice_size)
        for s in np.random.SeedSequence(seed).spawn(n_samples)
    ]
    logger.info(f'built {len(samples)} training samples, label range '
                f'{min(s.label for s in samples):.3f}..{max(s.label for s in samples):.3f} px')
    return samples


def configure_determinism(deterministic: bool, seed: int):
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def _tensors(samples: Sequence[TrainingSample]) -> Tuple[torch.Tensor, torch.Tensor]:
    x = torch.from_numpy(np.stack([s.slice for s in samples]).astype(np.float32))[:, None]
    y = torch.tensor([s.label for s in samples], dtype=torch.float32)
    return x, y


def pearson_r(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or a.std() == 0 or b.std() == 0:
        return float('nan')
    return float(np.corrcoef(a, b)[0, 1])


def regressor_train(samples: Sequence[TrainingSample], epochs: int, lr: float, seed: int, batch_size: int = 32,
                    val_fraction: float = 0.2, optimizer: str = 'adam', widths: Sequence[int] = REGRESSOR_WIDTHS,
                    min_samples: int = MIN_TRAINING_SAMPLES) -> TrainingResult:
    if len(samples) < min_samples:
        raise ConfigError(f'training needs at least {min_samples} samples, got {len(samples)}')
    if val_fraction < 0.2 or val_fraction >= 1:
        raise ConfigError(f'held-out fraction must lie in [0.2, 1), got {val_fraction}')
    order = np.random.default_rng(seed).permutation(len(samples))
    n_val = int(math.ceil(val_fraction * len(samples)))
    val = [samples[i] for i in order[:n_val]]
    train = [samples[i] for i in order[n_val:]]
    x_train, y_train = _tensors(train)
    x_val, y_val = _tensors(val)

    torch.manual_seed(seed)
    model = RpeRegressor(widths, train[0].slice.shape[-1])
    with torch.no_grad():
        model.head.bias.fill_(float(y_train.mean()))
    if optimizer == 'adam':
        opt = torch.optim.Adam(model.parameters(), lr=lr)
    elif optimizer == 'sgd':
        opt = torch.optim.SGD(model.parameters(), lr=lr, momentum=0.9)
    else:
        raise ConfigError(f'unknown optimizer {optimizer}')
    loss_fn = nn.MSELoss()
    loader = DataLoader(TensorDataset(x_train, y_train), batch_size=batch_size, shuffle=True,
                        generator=torch.Generator().manual_seed(seed))

    history = TrainingHistory()
    recent: List[float] = []
    for epoch in range(1, epochs + 1):
        model.train()
        total, count = 0.0, 0
        for batch, (x, y) in enumerate(loader):
            opt.zero_grad()
            loss = loss_fn(model(x), y)
            value = float(loss.detach())
            recent = (recent + [value])[-5:]
            if not math.isfinite(value):
                raise TrainingError(f'training diverged at epoch {epoch}, batch {batch}',
                                    {'epoch': epoch, 'batch': batch, 'lr': lr, 'last_losses': recent})
            loss.backward()
            opt.step()
            total += value * len(y)
            count += len(y)
        model.eval()
        with torch.no_grad():
            predictions = model(x_val)
            val_mse = float(loss_fn(predictions, y_val))
        r = pearson_r(predictions.numpy(), y_val.numpy())
        history.append(epoch, total / count, val_mse, r)
        logger.info(f'epoch {epoch}/{epochs}: train mse {total / count:.5g}, val mse {val_mse:.5g}, val r {r:.3f}')
    model.eval()
    with torch.no_grad():
        predictions = model(x_val).numpy()
    return TrainingResult(model, history, predictions, y_val.numpy())


def gradient_check(seed: int = 0, input_size: int = 4, widths: Sequence[int] = REGRESSOR_WIDTHS) -> bool:
    """Compare autograd loss gradients w.r.t. every weight with central finite differences."""
    torch.manual_seed(seed)
    model = RpeRegressor(widths, input_size).double()
    nn.init.normal_(model.head.weight, std=0.5)
    nn.init.normal_(model.head.bias, std=0.5)
    names = [name for name, _ in model.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_(True) for p in model.parameters())
    x = torch.randn(2, 1, input_size, input_size, dtype=torch.float64)
    y = torch.randn(2, dtype=torch.float64)

    def loss(*weights):
        prediction = functional_call(model, dict(zip(names, weights)), (x,))
        return torch.mean((prediction - y) ** 2)

    return torch.autograd.gradcheck(loss, params, eps=1e-6, atol=1e-6, rtol=1e-4, raise_exception=False)
