"""
Model parameter containers for AHGCN.
All trainable tensors live in one flat name -> array mapping so the optimizer,
the gradient checker and the checkpoint codec can walk them uniformly.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from src.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

PYRAMID_LEVELS = 4
REDUCED_CHANNELS = 16
POOL_GRID = 8
LEVEL_DIM = 256
DEFAULT_CHANNELS = (64, 128, 256, 512)
DEFAULT_LAYER_DIMS = (1024, 256, 128, 64, 32, 1)


@dataclass(frozen=True)
class DescriptorConfig:
    """Shape of the compaction head g(.) for the selected pyramid levels."""
    channels: Tuple[int, ...] = DEFAULT_CHANNELS
    levels: Tuple[int, ...] = (0, 1, 2, 3)
    reduced_channels: int = REDUCED_CHANNELS
    pool_grid: int = POOL_GRID
    level_dim: int = LEVEL_DIM

    def __post_init__(self):
        if len(self.channels) != PYRAMID_LEVELS:
            raise ConfigError(f"Channel profile needs {PYRAMID_LEVELS} entries, got {len(self.channels)}")
        if not self.levels or len(set(self.levels)) != len(self.levels):
            raise ConfigError(f"Descriptor levels must be non-empty and distinct, got {self.levels}")
        if any(level < 0 or level >= PYRAMID_LEVELS for level in self.levels):
            raise ConfigError(f"Descriptor levels must lie in [0, {PYRAMID_LEVELS}), got {self.levels}")
        if min(self.reduced_channels, self.pool_grid, self.level_dim) < 1:
            raise ConfigError("Descriptor dimensions must be positive")

    @property
    def flat_dim(self) -> int:
        return self.reduced_channels * self.pool_grid * self.pool_grid

    @property
    def out_dim(self) -> int:
        return len(self.levels) * self.level_dim


@dataclass(frozen=True)
class PredictorConfig:
    """HGCN stack layout."""
    layer_dims: Tuple[int, ...] = DEFAULT_LAYER_DIMS
    dropout_rate: float = 0.5
    bn_momentum: float = 0.1
    bn_epsilon: float = 1e-5
    residual: str = 'literal'

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ConfigError("layer_dims needs at least an input and an output dimension")
        if any(int(d) != d or d < 1 for d in self.layer_dims):
            raise ConfigError(f"layer_dims must be positive integers, got {self.layer_dims}")
        if self.layer_dims[-1] != 1:
            raise ConfigError(f"The last layer dimension must be 1, got {self.layer_dims[-1]}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.residual not in ('literal', 'identity'):
            raise ConfigError(f"residual must be 'literal' or 'identity', got {self.residual!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1


@dataclass
class ModelParams:
    """Trainable tensors plus non-trainable buffers (batch-norm running statistics)."""
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> List[str]:
        return list(self.tensors)

    def copy(self) -> 'ModelParams':
        return ModelParams(
            {k: v.copy() for k, v in self.tensors.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def all_arrays(self) -> Dict[str, np.ndarray]:
        """Trainable tensors followed by buffers, in insertion order."""
        merged = dict(self.tensors)
        merged.update(self.buffers)
        return merged

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))


def descriptor_names(level: int) -> Dict[str, str]:
    prefix = f'descriptor.level{level}'
    return {
        'reduce_w': f'{prefix}.reduce_w',
        'reduce_b': f'{prefix}.reduce_b',
        'fc_w': f'{prefix}.fc_w',
        'fc_b': f'{prefix}.fc_b',
    }


def layer_names(layer: int) -> Dict[str, str]:
    prefix = f'hgcn.layer{layer}'
    return {
        'W1': f'{prefix}.W1',
        'W2': f'{prefix}.W2',
        'bn_gamma': f'{prefix}.bn_gamma',
        'bn_beta': f'{prefix}.bn_beta',
        'bn_running_mean': f'{prefix}.bn_running_mean',
        'bn_running_var': f'{prefix}.bn_running_var',
    }


def _uniform(rng: np.random.Generator, fan_in: int, shape: Sequence[int]) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))


def init_params(descriptor: DescriptorConfig, predictor: PredictorConfig, seed: int) -> ModelParams:
    """
    Create freshly initialized parameters.

    Weights are uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; batch-norm scale 1,
    shift 0, running mean 0, running variance 1.

    Args:
        descriptor: Compaction head layout
        predictor: HGCN stack layout
        seed: Seed for the weight generator

    Returns:
        ModelParams
    """
    if predictor.layer_dims[0] != descriptor.out_dim:
        raise ShapeError(
            f"Predictor input dim {predictor.layer_dims[0]} does not match descriptor "
            f"output dim {descriptor.out_dim}")

    rng = np.random.default_rng(seed)
    params = ModelParams()

    for level in descriptor.levels:
        names = descriptor_names(level)
        channels = descriptor.channels[level]
        params.tensors[names['reduce_w']] = _uniform(rng, channels, (channels, descriptor.reduced_channels))
        params.tensors[names['reduce_b']] = _uniform(rng, channels, (descriptor.reduced_channels,))
        params.tensors[names['fc_w']] = _uniform(rng, descriptor.flat_dim, (descriptor.flat_dim, descriptor.level_dim))
        params.tensors[names['fc_b']] = _uniform(rng, descriptor.flat_dim, (descriptor.level_dim,))

    dims = predictor.layer_dims
    for layer in range(predictor.n_layers):
        names = layer_names(layer)
        d_in, d_out = dims[layer], dims[layer + 1]
        params.tensors[names['W1']] = _uniform(rng, d_in, (d_in, d_out))
        params.tensors[names['W2']] = _uniform(rng, d_in, (d_in, d_out))
        params.tensors[names['bn_gamma']] = np.ones(d_out)
        params.tensors[names['bn_beta']] = np.zeros(d_out)
        params.buffers[names['bn_running_mean']] = np.zeros(d_out)
        params.buffers[names['bn_running_var']] = np.ones(d_out)

    logger.debug(f"Initialized {params.num_parameters()} parameters (seed {seed})")
    return params


def check_params(params: ModelParams, descriptor: DescriptorConfig, predictor: PredictorConfig):
    """Raise ShapeError if params do not have exactly the configured layout."""
    reference = init_params(descriptor, predictor, seed=0)
    expected = reference.all_arrays()
    actual = params.all_arrays()
    missing = sorted(set(expected) - set(actual))
    extra = sorted(set(actual) - set(expected))
    if missing or extra:
        raise ShapeError(f"Parameter names differ from configuration: missing={missing}, unexpected={extra}")
    for name, ref in expected.items():
        if actual[name].shape != ref.shape:
            raise ShapeError(f"Parameter {name} has shape {actual[name].shape}, configuration expects {ref.shape}")
