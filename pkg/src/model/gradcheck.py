"""
Finite-difference gradient checker for AHGCN.
Compares every hand-written backward pass against central differences on a
small model: descriptor, batch norm, each HGCN layer and the MSE objective.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List

import numpy as np

from src.geometry.sphere_geometry import default_viewport_centers
from src.model.hgcn import TRAIN, batchnorm_backward, batchnorm_forward
from src.model.hypergraph import HypergraphBuilder
from src.model.params import DescriptorConfig, ModelParams, PredictorConfig, descriptor_names, init_params
from src.model.pipeline import QualityModel
from src.training.optimizer import mse_loss

logger = logging.getLogger(__name__)

STEP = 1e-3
THRESHOLD = 1e-4
ERROR_FLOOR = 1e-8
CORRUPTION = 1.1

N_VIEWPORTS = 6
BATCH = 3
MAP_SIZE = 6
DESCRIPTOR = DescriptorConfig(channels=(3, 4, 5, 6), reduced_channels=2, pool_grid=2, level_dim=3)


@dataclass
class TensorCheck:
    name: str
    block: str
    entries: int
    max_abs_error: float
    rel_error: float
    passed: bool


@dataclass
class GradcheckReport:
    seed: int
    step: float
    threshold: float
    tensors: List[TensorCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tensors)

    @property
    def blocks(self) -> Dict[str, float]:
        """Max relative error per block."""
        worst: Dict[str, float] = {}
        for check in self.tensors:
            worst[check.block] = max(worst.get(check.block, 0.0), check.rel_error)
        return worst

    def to_dict(self) -> Dict:
        return {
            'seed': self.seed,
            'step': self.step,
            'threshold': self.threshold,
            'passed': self.passed,
            'blocks': self.blocks,
            'tensors': [asdict(t) for t in self.tensors],
        }


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| / max(max|a|, max|n|, floor)."""
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), ERROR_FLOOR)
    return float(np.max(np.abs(analytic - numeric))) / scale


def numeric_gradient(loss_fn: Callable[[], float], array: np.ndarray, indices, step: float = STEP) -> np.ndarray:
    """Central differences of loss_fn w.r.t. the given entries of array (perturbed in place)."""
    out = np.empty(len(indices))
    for n, index in enumerate(indices):
        original = array[index]
        array[index] = original + step
        plus = loss_fn()
        array[index] = original - step
        minus = loss_fn()
        array[index] = original
        out[n] = (plus - minus) / (2.0 * step)
    return out


def _sample_indices(rng: np.random.Generator, shape, limit: int):
    size = int(np.prod(shape))
    flat = np.sort(rng.choice(size, size=min(size, limit), replace=False))
    return list(zip(*np.unravel_index(flat, shape)))


def _peaked_stacks(rng: np.random.Generator) -> List[List[np.ndarray]]:
    """
    Maps with one dominant position per pool window, so the max-pool argmax
    cannot move under a finite-difference step.
    """
    window = math.ceil(MAP_SIZE / DESCRIPTOR.pool_grid)
    stacks = []
    for _ in range(BATCH):
        levels = []
        for channels in DESCRIPTOR.channels:
            maps = rng.uniform(0.0, 0.5, size=(N_VIEWPORTS, channels, MAP_SIZE, MAP_SIZE))
            for v in range(N_VIEWPORTS):
                for gi in range(DESCRIPTOR.pool_grid):
                    for gj in range(DESCRIPTOR.pool_grid):
                        r, c = rng.integers(0, window, size=2)
                        maps[v, :, gi * window + r, gj * window + c] += 2.0
            levels.append(maps)
        stacks.append(levels)
    return stacks


def _check(report: GradcheckReport, name: str, block: str, analytic: np.ndarray, numeric: np.ndarray):
    error = relative_error(analytic, numeric)
    report.tensors.append(TensorCheck(
        name=name, block=block, entries=int(numeric.size),
        max_abs_error=float(np.max(np.abs(analytic - numeric))),
        rel_error=error, passed=error < report.threshold))


def _check_batchnorm(report: GradcheckReport, rng: np.random.Generator, scale: float, max_entries: int):
    h = rng.normal(size=(10, 5))
    gamma = rng.uniform(0.5, 1.5, size=5)
    beta = rng.normal(size=5)
    weights = rng.normal(size=(10, 5))
    mean, var = np.zeros(5), np.ones(5)

    def loss():
        out, _, _, _ = batchnorm_forward(h, gamma, beta, mean, var, TRAIN)
        return float(np.sum(out * weights))

    _, cache, _, _ = batchnorm_forward(h, gamma, beta, mean, var, TRAIN)
    grads = batchnorm_backward(weights, cache, gamma)
    for name, array, grad in zip(('input', 'gamma', 'beta'), (h, gamma, beta), grads):
        indices = _sample_indices(rng, array.shape, max_entries)
        numeric = numeric_gradient(loss, array, indices, report.step)
        analytic = np.array([grad[i] for i in indices]) * scale
        _check(report, f'batchnorm.{name}', 'batchnorm', analytic, numeric)


def _check_mse(report: GradcheckReport, rng: np.random.Generator, scale: float):
    pred = rng.normal(size=4)
    target = rng.normal(size=4)
    _, grad = mse_loss(pred, target)
    indices = [(i,) for i in range(pred.size)]
    numeric = numeric_gradient(lambda: mse_loss(pred, target)[0], pred, indices, report.step)
    _check(report, 'mse.pred', 'mse', grad * scale, numeric)


def _block_of(name: str) -> str:
    if name.startswith('descriptor.'):
        return 'descriptor'
    return name.rsplit('.', 1)[0]


def run_gradcheck(seed: int = 0, corrupt: bool = False, residual: str = 'literal',
                  max_entries: int = 24) -> GradcheckReport:
    """
    Check all analytic gradients against central differences.

    The model is small (6 viewports, 3 samples, dims 12-6-6-1) with dropout on
    and a fixed mask seed; the location-only hypergraph keeps the operator
    independent of the features.

    Args:
        seed: Seed for data, parameters and dropout masks
        corrupt: Scale analytic gradients by 1.1 (the check must then fail)
        residual: Predictor residual mode
        max_entries: Entries sampled per tensor

    Returns:
        GradcheckReport covering every parameter tensor
    """
    rng = np.random.default_rng(seed)
    scale = CORRUPTION if corrupt else 1.0
    report = GradcheckReport(seed=seed, step=STEP, threshold=THRESHOLD)

    predictor = PredictorConfig(layer_dims=(DESCRIPTOR.out_dim, 6, 6, 1), dropout_rate=0.5, residual=residual)
    centers = default_viewport_centers()[:N_VIEWPORTS]
    builder = HypergraphBuilder(centers, math.radians(60.0), k=0, hyperedges='location')
    model = QualityModel(DESCRIPTOR, predictor, builder)

    params = init_params(DESCRIPTOR, predictor, seed)
    for level in DESCRIPTOR.levels:
        name = descriptor_names(level)['reduce_w']
        params.tensors[name] = rng.uniform(0.5, 1.0, size=params.tensors[name].shape)
    stacks = _peaked_stacks(rng)
    targets = rng.uniform(0.0, 1.0, size=BATCH)
    dropout_seed = int(rng.integers(0, 2 ** 31))

    def forward(record: bool):
        trial = ModelParams(params.tensors, {k: v.copy() for k, v in params.buffers.items()})
        return model.forward(stacks, trial, TRAIN, np.random.default_rng(dropout_seed), record=record)

    def loss() -> float:
        quality, _ = forward(False)
        return mse_loss(quality, targets)[0]

    quality, tape = forward(True)
    _, grad_quality = mse_loss(quality, targets)
    grads = model.backward(tape, grad_quality)

    for name, array in params.tensors.items():
        indices = _sample_indices(rng, array.shape, max_entries)
        numeric = numeric_gradient(loss, array, indices, report.step)
        analytic = np.array([grads[name][i] for i in indices]) * scale
        _check(report, name, _block_of(name), analytic, numeric)

    _check_batchnorm(report, rng, scale, max_entries)
    _check_mse(report, rng, scale)

    for block, error in report.blocks.items():
        logger.info(f"gradcheck {block}: max relative error {error:.3e}")
    logger.info(f"gradcheck {'passed' if report.passed else 'FAILED'} ({len(report.tensors)} tensors)")
    return report
