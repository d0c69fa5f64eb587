"""
File Operations Module
Handles atomic artifact writes, the AHGF feature-pyramid and AHGC checkpoint
codecs, and image I/O.
"""

import io
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
from PIL import Image

from src.errors import CheckpointError, FileFormatError, ShapeError
from src.geometry.sphere_geometry import EquirectImage
from src.model.descriptor import FeaturePyramid
from src.model.params import DescriptorConfig, ModelParams, PredictorConfig, check_params, layer_names
from src.training.optimizer import AdamState

logger = logging.getLogger(__name__)

PYRAMID_MAGIC = b'AHGF'
CHECKPOINT_MAGIC = b'AHGC'
FORMAT_VERSION = 1
ADAM_STEP = 'adam.step'
ADAM_M = 'adam.m.'
ADAM_V = 'adam.v.'

PathLike = Union[str, Path]


def atomic_write(path: PathLike, data: Union[bytes, str]) -> Path:
    """Write to a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode('utf-8') if isinstance(data, str) else data
    fd, tmp_name = tempfile.mkstemp(prefix=f'.{path.name}.', suffix='.tmp', dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.debug(f"Wrote {len(payload)} bytes to {path}")
    return path


def encode_pyramid(pyramid: FeaturePyramid) -> bytes:
    """AHGF: magic, u16 version, u8 level count, then per level u32 C/H/W and float32 data."""
    out = io.BytesIO()
    out.write(PYRAMID_MAGIC)
    out.write(struct.pack('<HB', FORMAT_VERSION, len(pyramid.levels)))
    for level in pyramid.levels:
        out.write(struct.pack('<III', *level.shape))
        out.write(np.ascontiguousarray(level, dtype='<f4').tobytes())
    return out.getvalue()


def decode_pyramid(data: bytes, source: str = '<bytes>') -> FeaturePyramid:
    if len(data) < 7 or data[:4] != PYRAMID_MAGIC:
        raise FileFormatError(f"{source}: not an AHGF feature pyramid")
    version, count = struct.unpack_from('<HB', data, 4)
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{source}: unsupported AHGF version {version}")
    offset = 7
    levels = []
    for index in range(count):
        if offset + 12 > len(data):
            raise FileFormatError(f"{source}: truncated header for level {index}")
        shape = struct.unpack_from('<III', data, offset)
        offset += 12
        size = int(np.prod(shape)) * 4
        if offset + size > len(data):
            raise FileFormatError(f"{source}: truncated data for level {index}")
        levels.append(np.frombuffer(data, dtype='<f4', count=size // 4, offset=offset)
                      .reshape(shape).astype(np.float64))
        offset += size
    if offset != len(data):
        raise FileFormatError(f"{source}: {len(data) - offset} trailing bytes")
    return FeaturePyramid(levels)


def read_pyramid(path: PathLike) -> FeaturePyramid:
    path = Path(path)
    return decode_pyramid(path.read_bytes(), str(path))


def encode_checkpoint(params: ModelParams, n_layers: int, adam: Optional[AdamState] = None) -> bytes:
    """
    AHGC: magic, u16 version, u8 layer count, then tensors until end of file.
    Each tensor is u16 name length, UTF-8 name, u8 rank, u32 dims, float32 data.
    """
    tensors = params.all_arrays()
    if adam is not None:
        tensors[ADAM_STEP] = np.array(adam.step, dtype=np.float64)
        for name in params.tensors:
            if name in adam.m:
                tensors[ADAM_M + name] = adam.m[name]
                tensors[ADAM_V + name] = adam.v[name]

    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack('<HB', FORMAT_VERSION, n_layers))
    for name, array in tensors.items():
        encoded = name.encode('utf-8')
        array = np.asarray(array)
        out.write(struct.pack('<H', len(encoded)))
        out.write(encoded)
        out.write(struct.pack('<B', array.ndim))
        if array.ndim:
            out.write(struct.pack(f'<{array.ndim}I', *array.shape))
        out.write(np.ascontiguousarray(array, dtype='<f4').tobytes())
    return out.getvalue()


def decode_checkpoint(data: bytes, source: str = '<bytes>') -> Tuple[Dict[str, np.ndarray], int]:
    """Returns (name -> float64 array, layer count)."""
    if len(data) < 7 or data[:4] != CHECKPOINT_MAGIC:
        raise FileFormatError(f"{source}: not an AHGC checkpoint")
    version, n_layers = struct.unpack_from('<HB', data, 4)
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{source}: unsupported AHGC version {version}")
    offset = 7
    tensors: Dict[str, np.ndarray] = {}
    try:
        while offset < len(data):
            (name_len,) = struct.unpack_from('<H', data, offset)
            offset += 2
            name = data[offset:offset + name_len].decode('utf-8')
            offset += name_len
            (rank,) = struct.unpack_from('<B', data, offset)
            offset += 1
            shape = struct.unpack_from(f'<{rank}I', data, offset) if rank else ()
            offset += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if offset + 4 * count > len(data):
                raise FileFormatError(f"{source}: truncated tensor {name}")
            tensors[name] = (np.frombuffer(data, dtype='<f4', count=count, offset=offset)
                             .reshape(shape).astype(np.float64))
            offset += 4 * count
    except (struct.error, UnicodeDecodeError) as e:
        raise FileFormatError(f"{source}: corrupt checkpoint ({e})") from e
    return tensors, n_layers


def split_checkpoint(tensors: Dict[str, np.ndarray], buffer_names) -> Tuple[ModelParams, Optional[AdamState]]:
    """Separate decoded tensors into parameters, buffers and optional optimizer state."""
    buffer_names = set(buffer_names)
    params = ModelParams()
    adam = None
    if ADAM_STEP in tensors:
        adam = AdamState(step=int(tensors[ADAM_STEP]))
    for name, array in tensors.items():
        if name == ADAM_STEP:
            continue
        if name.startswith(ADAM_M):
            adam.m[name[len(ADAM_M):]] = array
        elif name.startswith(ADAM_V):
            adam.v[name[len(ADAM_V):]] = array
        elif name in buffer_names:
            params.buffers[name] = array
        else:
            params.tensors[name] = array
    return params, adam


def read_checkpoint(path: PathLike) -> Tuple[Dict[str, np.ndarray], int]:
    path = Path(path)
    if not path.is_file():
        raise FileFormatError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), str(path))


def load_checkpoint(path: PathLike, descriptor: DescriptorConfig, predictor: PredictorConfig
                    ) -> Tuple[ModelParams, Optional[AdamState]]:
    """
    Read a checkpoint and check it against the configured model.

    Raises:
        CheckpointError: layer count, tensor names or shapes differ from the configuration
    """
    tensors, n_layers = read_checkpoint(path)
    if n_layers != predictor.n_layers:
        raise CheckpointError(f"{path}: checkpoint has {n_layers} HGCN layers, configuration has {predictor.n_layers}")
    buffer_names = [layer_names(layer)[key] for layer in range(n_layers)
                    for key in ('bn_running_mean', 'bn_running_var')]
    params, adam = split_checkpoint(tensors, buffer_names)
    try:
        check_params(params, descriptor, predictor)
    except ShapeError as e:
        raise CheckpointError(f"{path}: {e}") from e
    logger.info(f"Loaded checkpoint {path}: {params.num_parameters()} parameters")
    return params, adam


def load_equirect(path: PathLike) -> EquirectImage:
    """Read an 8-bit PNG/PPM equirectangular image into [0, 1] intensities."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert('RGB'), dtype=np.float64) / 255.0
    except (OSError, ValueError) as e:
        raise FileFormatError(f"Cannot read image {path}: {e}") from e
    return EquirectImage(pixels)


def encode_png(pixels: np.ndarray) -> bytes:
    """8-bit PNG of an (H, W, 3) array in [0, 1]."""
    data = np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    out = io.BytesIO()
    Image.fromarray(data).save(out, format='PNG')
    return out.getvalue()


class FileOperations:
    """Writes run artifacts under one output directory."""

    def __init__(self, output_dir: PathLike = "runs"):
        """
        Initialize file operations.

        Args:
            output_dir: Base directory for artifacts
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"File operations initialized: {output_dir}")

    def path(self, name: PathLike) -> Path:
        name = Path(name)
        return name if name.is_absolute() else self.output_dir / name

    def write_text(self, name: PathLike, text: str) -> Path:
        return atomic_write(self.path(name), text)

    def write_bytes(self, name: PathLike, data: bytes) -> Path:
        return atomic_write(self.path(name), data)

    def save_pyramid(self, name: PathLike, pyramid: FeaturePyramid) -> Path:
        return self.write_bytes(name, encode_pyramid(pyramid))

    def save_viewport(self, name: PathLike, pixels: np.ndarray) -> Path:
        return self.write_bytes(name, encode_png(pixels))

    def save_checkpoint(self, name: PathLike, params: ModelParams, n_layers: int,
                        adam: Optional[AdamState] = None) -> Path:
        path = self.write_bytes(name, encode_checkpoint(params, n_layers, adam))
        logger.info(f"Saved checkpoint: {path}")
        return path
