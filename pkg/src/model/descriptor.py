"""
Multi-level Viewport Descriptor for AHGCN
Compacts every backbone feature map with reduce-pool-flatten-transform and
concatenates the compacted levels into one hierarchical viewport feature.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ShapeError, TapeError
from src.model.params import (
    PYRAMID_LEVELS, DescriptorConfig, ModelParams, descriptor_names,
)

logger = logging.getLogger(__name__)

MIN_SPATIAL = 8

# (channels, height, width) per level
PYRAMID_PROFILES: Dict[str, Tuple[Tuple[int, int, int], ...]] = {
    'resnet18': ((64, 64, 64), (128, 32, 32), (256, 16, 16), (512, 8, 8)),
    'compact': ((64, 16, 16), (128, 8, 8), (256, 8, 8), (512, 8, 8)),
}


@dataclass
class FeaturePyramid:
    """Backbone output for one viewport: exactly four (C, H, W) maps."""
    levels: List[np.ndarray]

    def __post_init__(self):
        if len(self.levels) != PYRAMID_LEVELS:
            raise ShapeError(f"Feature pyramid needs {PYRAMID_LEVELS} levels, got {len(self.levels)}")
        checked = []
        for index, level in enumerate(self.levels):
            level = np.asarray(level, dtype=np.float64)
            if level.ndim != 3:
                raise ShapeError(f"Level {index} must be (C, H, W), got shape {level.shape}")
            if level.shape[1] < MIN_SPATIAL or level.shape[2] < MIN_SPATIAL:
                raise ShapeError(f"Level {index} spatial size {level.shape[1:]} is below {MIN_SPATIAL}x{MIN_SPATIAL}")
            if not np.all(np.isfinite(level)):
                raise ShapeError(f"Level {index} contains non-finite values")
            checked.append(level)
        self.levels = checked

    @property
    def shapes(self) -> Tuple[Tuple[int, int, int], ...]:
        return tuple(tuple(level.shape) for level in self.levels)

    @property
    def channel_profile(self) -> Tuple[int, ...]:
        return tuple(level.shape[0] for level in self.levels)


@dataclass
class LevelRecord:
    """Intermediates of one compact_level call, needed by the backward pass."""
    maps: np.ndarray
    source_index: np.ndarray
    flat: np.ndarray
    spatial: Tuple[int, int]
    single: bool


@dataclass
class DescriptorTape:
    """Recorded forward pass over a stack of viewports."""
    levels: Tuple[int, ...]
    records: List[LevelRecord] = field(default_factory=list)
    params: Dict[str, np.ndarray] = field(default_factory=dict)


def synthesize_pyramid(seed: int,
                       profile: Union[str, Sequence[Tuple[int, int, int]]] = 'resnet18') -> FeaturePyramid:
    """
    Deterministic pseudo-random pyramid with values in [-1, 1].

    Args:
        seed: Generator seed; equal seeds give bitwise-identical pyramids
        profile: Profile name from PYRAMID_PROFILES or explicit (C, H, W) shapes

    Returns:
        FeaturePyramid
    """
    shapes = PYRAMID_PROFILES[profile] if isinstance(profile, str) else tuple(profile)
    rng = np.random.default_rng(seed)
    return FeaturePyramid([rng.uniform(-1.0, 1.0, size=shape) for shape in shapes])


def _pool_index(reduced: np.ndarray, grid: int) -> np.ndarray:
    """
    Flat (row * W + col) position of the maximum of every pool window.

    Windows are ceil(H/grid) x ceil(W/grid) with equal stride; the last row/column
    of windows may be cut short by the map border. When that layout would leave a
    window empty, windows fall back to adaptive floor/ceil boundaries.
    Ties resolve to the first position in row-major order.
    """
    count, channels, height, width = reduced.shape
    win_h = math.ceil(height / grid)
    win_w = math.ceil(width / grid)

    if win_h * (grid - 1) < height and win_w * (grid - 1) < width:
        padded = np.full((count, channels, grid * win_h, grid * win_w), -np.inf)
        padded[:, :, :height, :width] = reduced
        windows = padded.reshape(count, channels, grid, win_h, grid, win_w)
        windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(count, channels, grid, grid, win_h * win_w)
        local = np.argmax(windows, axis=-1)
        rows = np.arange(grid)[:, None] * win_h + local // win_w
        cols = np.arange(grid)[None, :] * win_w + local % win_w
        return rows * width + cols

    index = np.empty((count, channels, grid, grid), dtype=np.int64)
    for gi in range(grid):
        r0, r1 = (gi * height) // grid, -((-(gi + 1) * height) // grid)
        for gj in range(grid):
            c0, c1 = (gj * width) // grid, -((-(gj + 1) * width) // grid)
            window = reduced[:, :, r0:r1, c0:c1].reshape(count, channels, -1)
            local = np.argmax(window, axis=-1)
            index[:, :, gi, gj] = (r0 + local // (c1 - c0)) * width + c0 + local % (c1 - c0)
    return index


def compact_level(feature_map: np.ndarray, reduce_w: np.ndarray, reduce_b: np.ndarray,
                  fc_w: np.ndarray, fc_b: np.ndarray, pool_grid: int = 8,
                  record: bool = False) -> Tuple[np.ndarray, Optional[LevelRecord]]:
    """
    Reduce-pool-flatten-transform one feature map.

    Args:
        feature_map: (C, H, W) map, or a (V, C, H, W) stack of maps
        reduce_w, reduce_b: 1x1 channel reduction C -> r
        fc_w, fc_b: affine transform (r * grid * grid) -> d
        pool_grid: Side of the max-pool output grid
        record: Keep intermediates for descriptor_backward

    Returns:
        (compacted vector(s) of length d, LevelRecord or None)
    """
    maps = np.asarray(feature_map, dtype=np.float64)
    single = maps.ndim == 3
    if single:
        maps = maps[None]
    if maps.ndim != 4:
        raise ShapeError(f"Expected a (C, H, W) or (V, C, H, W) map, got shape {maps.shape}")

    count, channels, height, width = maps.shape
    if reduce_w.ndim != 2 or reduce_w.shape[0] != channels:
        raise ShapeError(f"Reduce weights {reduce_w.shape} do not match map channels {channels}")
    reduced_channels = reduce_w.shape[1]
    if reduce_b.shape != (reduced_channels,):
        raise ShapeError(f"Reduce bias {reduce_b.shape} does not match {reduced_channels} channels")
    flat_dim = reduced_channels * pool_grid * pool_grid
    if fc_w.ndim != 2 or fc_w.shape[0] != flat_dim or fc_b.shape != (fc_w.shape[1],):
        raise ShapeError(f"FC weights {fc_w.shape}/{fc_b.shape} do not match flattened size {flat_dim}")
    if height < pool_grid or width < pool_grid:
        raise ShapeError(f"Map {height}x{width} is smaller than the {pool_grid}x{pool_grid} pool grid")

    flat_maps = maps.reshape(count, channels, height * width)
    reduced = np.matmul(reduce_w.T[None], flat_maps) + reduce_b[None, :, None]
    source_index = _pool_index(reduced.reshape(count, reduced_channels, height, width), pool_grid)
    pooled = np.take_along_axis(reduced, source_index.reshape(count, reduced_channels, -1), axis=2)
    flat = pooled.reshape(count, flat_dim)
    out = flat @ fc_w + fc_b

    level_record = None
    if record:
        level_record = LevelRecord(flat_maps, source_index, flat, (height, width), single)
    return (out[0] if single else out), level_record


def concat_levels(compacted: Sequence[np.ndarray], expected_levels: int = PYRAMID_LEVELS,
                  level_dim: int = 256) -> np.ndarray:
    """
    Concatenate compacted level vectors in level order.

    Args:
        compacted: One vector (d,) or stack (V, d) per level
        expected_levels: Required number of levels
        level_dim: Required length d of each level vector

    Returns:
        Hierarchical feature(s) of length expected_levels * level_dim
    """
    if len(compacted) != expected_levels:
        raise ShapeError(f"Expected {expected_levels} compacted levels, got {len(compacted)}")
    arrays = [np.asarray(c, dtype=np.float64) for c in compacted]
    for index, array in enumerate(arrays):
        if array.shape[-1] != level_dim:
            raise ShapeError(f"Level {index} has length {array.shape[-1]}, expected {level_dim}")
    if len({array.shape[:-1] for array in arrays}) != 1:
        raise ShapeError("Compacted levels disagree on the number of viewports")
    return np.concatenate(arrays, axis=-1)


def stack_pyramids(pyramids: Sequence[FeaturePyramid]) -> List[np.ndarray]:
    """Stack the same level of several pyramids into (V, C, H, W) arrays."""
    if not pyramids:
        raise ShapeError("No pyramids to stack")
    shapes = pyramids[0].shapes
    for index, pyramid in enumerate(pyramids):
        if pyramid.shapes != shapes:
            raise ShapeError(f"Pyramid {index} has shapes {pyramid.shapes}, expected {shapes}")
    return [np.stack([p.levels[level] for p in pyramids]) for level in range(PYRAMID_LEVELS)]


def describe_viewports(level_stacks: Sequence[np.ndarray], params: ModelParams,
                       config: DescriptorConfig, record: bool = False
                       ) -> Tuple[np.ndarray, Optional[DescriptorTape]]:
    """
    Hierarchical features for a stack of viewports.

    Args:
        level_stacks: Per pyramid level, a (V, C, H, W) array (see stack_pyramids)
        params: Model parameters holding the descriptor tensors
        config: Descriptor layout (selected levels, dims)
        record: Keep a tape for descriptor_backward

    Returns:
        (X of shape (V, len(levels) * d), DescriptorTape or None)
    """
    if len(level_stacks) != PYRAMID_LEVELS:
        raise ShapeError(f"Expected {PYRAMID_LEVELS} level stacks, got {len(level_stacks)}")

    tape = DescriptorTape(levels=tuple(config.levels)) if record else None
    compacted = []
    for level in config.levels:
        names = descriptor_names(level)
        weights = {key: params.tensors[name] for key, name in names.items()}
        vectors, level_record = compact_level(
            level_stacks[level], weights['reduce_w'], weights['reduce_b'],
            weights['fc_w'], weights['fc_b'], pool_grid=config.pool_grid, record=record)
        compacted.append(vectors)
        if tape is not None:
            tape.records.append(level_record)
            tape.params.update({name: params.tensors[name] for name in names.values()})

    return concat_levels(compacted, len(config.levels), config.level_dim), tape


def descriptor_backward(grad_x: np.ndarray, tape: Optional[DescriptorTape]
                        ) -> Tuple[Dict[str, np.ndarray], Dict[int, np.ndarray]]:
    """
    Reverse-mode gradients through the descriptor head.

    Args:
        grad_x: Upstream gradient, (D,) or (V, D)
        tape: Tape from describe_viewports(..., record=True)

    Returns:
        (parameter gradients keyed by tensor name, input-map gradients keyed by level)
    """
    if tape is None or len(tape.records) != len(tape.levels):
        raise TapeError("descriptor_backward needs a forward pass run with record=True")

    grad_x = np.asarray(grad_x, dtype=np.float64)
    if grad_x.ndim == 1:
        grad_x = grad_x[None]

    param_grads: Dict[str, np.ndarray] = {}
    map_grads: Dict[int, np.ndarray] = {}
    offset = 0
    for level, rec in zip(tape.levels, tape.records):
        names = descriptor_names(level)
        reduce_w = tape.params[names['reduce_w']]
        fc_w = tape.params[names['fc_w']]
        level_dim = fc_w.shape[1]
        grad_c = grad_x[:, offset:offset + level_dim]
        offset += level_dim
        if grad_c.shape[0] != rec.flat.shape[0]:
            raise TapeError(f"Upstream gradient covers {grad_c.shape[0]} viewports, tape has {rec.flat.shape[0]}")

        param_grads[names['fc_b']] = grad_c.sum(axis=0)
        param_grads[names['fc_w']] = rec.flat.T @ grad_c
        grad_flat = grad_c @ fc_w.T

        # max-pool routes each cell's gradient to its recorded argmax
        count, reduced_channels = rec.source_index.shape[:2]
        spatial = rec.spatial[0] * rec.spatial[1]
        rows = np.arange(count * reduced_channels)[:, None] * spatial
        targets = (rows + rec.source_index.reshape(count * reduced_channels, -1)).ravel()
        grad_reduced = np.bincount(targets, weights=grad_flat.ravel(),
                                   minlength=count * reduced_channels * spatial)
        grad_reduced = grad_reduced.reshape(count, reduced_channels, spatial)

        param_grads[names['reduce_b']] = grad_reduced.sum(axis=(0, 2))
        param_grads[names['reduce_w']] = np.tensordot(rec.maps, grad_reduced, axes=([0, 2], [0, 2]))
        grad_maps = np.matmul(reduce_w[None], grad_reduced)
        grad_maps = grad_maps.reshape(count, -1, rec.spatial[0], rec.spatial[1])
        map_grads[level] = grad_maps[0] if rec.single else grad_maps

    return param_grads, map_grads
