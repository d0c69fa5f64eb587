"""
Dataset Manager for AHGCN
Reads the sample manifest, turns every sample into per-level viewport stacks
(from AHGF files, rendered images, or the synthetic generator), caches them,
and prefetches them on a worker thread.
"""

import csv
import logging
import math
import threading
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from queue import Queue
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import FileFormatError, ManifestError, ShapeError
from src.geometry.sphere_geometry import SphereCoord, ViewportSpec, render_viewport
from src.model.descriptor import PYRAMID_PROFILES, FeaturePyramid, stack_pyramids, synthesize_pyramid
from src.system.file_operations import load_equirect, read_pyramid

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ('id', 'path', 'mos')
PAIR_LABEL_COLUMNS = ('first', 'second', 'label')
IMAGE_SUFFIXES = {'.png', '.ppm', '.pnm', '.jpg', '.jpeg', '.bmp'}


@dataclass
class Sample:
    """One distorted 360-degree image: where its viewports come from and its MOS."""
    sample_id: str
    path: Optional[Path]
    mos: float
    distortion: Optional[str] = None
    line: int = 0

    def __post_init__(self):
        if not math.isfinite(self.mos):
            raise ManifestError(f"Sample {self.sample_id}: MOS must be finite, got {self.mos}")


def viewport_file_name(index: int) -> str:
    return f'vp_{index:02d}.ahgf'


def read_manifest(path: Union[str, Path]) -> List[Sample]:
    """
    Parse a manifest CSV with header id,path,mos (optional distortion column).

    Relative paths resolve against the manifest's directory.

    Raises:
        ManifestError: with the offending line number
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"Manifest not found: {path}")

    samples: List[Sample] = []
    seen = set()
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise ManifestError(f"{path}:1: missing column(s) {', '.join(missing)}")
        for row in reader:
            line = reader.line_num
            sample_id = (row.get('id') or '').strip()
            if not sample_id:
                raise ManifestError(f"{path}:{line}: empty sample id")
            if sample_id in seen:
                raise ManifestError(f"{path}:{line}: duplicate sample id {sample_id!r}")
            seen.add(sample_id)
            try:
                mos = float(row['mos'])
            except (TypeError, ValueError):
                raise ManifestError(f"{path}:{line}: invalid MOS {row.get('mos')!r} for sample {sample_id}")
            if not math.isfinite(mos):
                raise ManifestError(f"{path}:{line}: non-finite MOS for sample {sample_id}")
            raw_path = (row.get('path') or '').strip()
            sample_path = None
            if raw_path:
                sample_path = Path(raw_path)
                if not sample_path.is_absolute():
                    sample_path = path.parent / sample_path
            distortion = (row.get('distortion') or '').strip() or None
            samples.append(Sample(sample_id, sample_path, mos, distortion, line))

    logger.info(f"Read {len(samples)} samples from {path}")
    return samples


def read_pair_labels(path: Union[str, Path], sample_ids: Sequence[str]) -> np.ndarray:
    """
    Parse significance labels for every unordered pair of the given samples.

    The CSV has header first,second,label; label is +1 when `second` is
    significantly better than `first`, -1 when worse, 0 when similar. Pairs may
    be listed in either order.

    Returns:
        Labels in itertools.combinations order over sample_ids

    Raises:
        ManifestError: unknown id, repeated or missing pair, invalid label
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"Pair label file not found: {path}")
    position = {sample_id: i for i, sample_id in enumerate(sample_ids)}
    n = len(position)
    labels = np.zeros((n, n))
    seen = np.zeros((n, n), dtype=bool)

    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f)
        missing = [c for c in PAIR_LABEL_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError(f"{path}:1: missing column(s) {', '.join(missing)}")
        for row in reader:
            line = reader.line_num
            first, second = (row.get('first') or '').strip(), (row.get('second') or '').strip()
            for sample_id in (first, second):
                if sample_id not in position:
                    raise ManifestError(f"{path}:{line}: unknown sample id {sample_id!r}")
            if first == second:
                raise ManifestError(f"{path}:{line}: pair of {first!r} with itself")
            try:
                label = int((row.get('label') or '').strip())
            except ValueError:
                label = None
            if label not in (-1, 0, 1):
                raise ManifestError(f"{path}:{line}: label must be -1, 0 or 1, got {row.get('label')!r}")
            i, j = position[first], position[second]
            if i > j:
                i, j, label = j, i, -label
            if seen[i, j]:
                raise ManifestError(f"{path}:{line}: pair ({first}, {second}) listed twice")
            seen[i, j] = True
            labels[i, j] = label

    upper = np.triu_indices(n, k=1)
    if not seen[upper].all():
        i, j = next((i, j) for i, j in zip(*upper) if not seen[i, j])
        raise ManifestError(f"{path}: no label for pair ({sample_ids[i]}, {sample_ids[j]}); "
                            f"{int((~seen[upper]).sum())} pair(s) missing")
    logger.info(f"Read {upper[0].size} pair labels from {path}")
    return labels[upper]


class ProjectionFeatureSource:
    """
    Stand-in backbone for rendered viewports: each level is the viewport
    average-pooled to the level's spatial size and lifted to C channels by a
    fixed seeded random 1x1 projection followed by tanh.
    """

    def __init__(self, shapes: Sequence[Tuple[int, int, int]], seed: int = 0):
        self.shapes = tuple(tuple(s) for s in shapes)
        rng = np.random.default_rng(seed)
        self._weights = [rng.normal(0.0, 1.0, size=(c, 3)) for c, _, _ in self.shapes]
        self._bias = [rng.normal(0.0, 0.1, size=c) for c, _, _ in self.shapes]

    @staticmethod
    def _pool(pixels: np.ndarray, height: int, width: int) -> np.ndarray:
        rows = (np.arange(height) * pixels.shape[0]) // height
        cols = (np.arange(width) * pixels.shape[1]) // width
        row_counts = np.diff(np.append(rows, pixels.shape[0]))
        col_counts = np.diff(np.append(cols, pixels.shape[1]))
        summed = np.add.reduceat(np.add.reduceat(pixels, rows, axis=0), cols, axis=1)
        return summed / (row_counts[:, None, None] * col_counts[None, :, None])

    def pyramid(self, viewport: np.ndarray) -> FeaturePyramid:
        levels = []
        for (channels, height, width), w, b in zip(self.shapes, self._weights, self._bias):
            pooled = self._pool(viewport, height, width) - 0.5
            levels.append(np.tanh(np.einsum('ck,hwk->chw', w, pooled) + b[:, None, None]))
        return FeaturePyramid(levels)


class DatasetManager:
    """Loads samples into per-level (N, C, H, W) viewport stacks."""

    def __init__(self, samples: Sequence[Sample], centers: Sequence[SphereCoord],
                 feature_source: str = 'files', pyramid_profile: str = 'resnet18',
                 fov: float = 90.0, resolution: int = 256, seed: int = 0,
                 cache_samples: bool = True, cache_mb: float = 1024.0):
        """
        Initialize dataset manager.

        Args:
            samples: Manifest entries
            centers: Viewport centers (N per sample)
            feature_source: 'files' (AHGF directories or images) or 'synthetic'
            pyramid_profile: Expected pyramid shapes (PYRAMID_PROFILES key)
            fov: Viewport field of view for rendered images
            resolution: Viewport resolution for rendered images
            seed: Seed for synthetic pyramids and the projection source
            cache_samples: Keep loaded stacks in memory
            cache_mb: Cache size limit; least recently used samples are evicted beyond it
        """
        if feature_source not in ('files', 'synthetic'):
            raise ManifestError(f"Unknown feature source {feature_source!r}")
        if pyramid_profile not in PYRAMID_PROFILES:
            raise ManifestError(f"Unknown pyramid profile {pyramid_profile!r}")
        if not cache_mb > 0:
            raise ManifestError(f"Cache limit must be positive, got {cache_mb} MB")
        self.samples = list(samples)
        self.centers = list(centers)
        self.feature_source = feature_source
        self.profile = pyramid_profile
        self.shapes = PYRAMID_PROFILES[pyramid_profile]
        self.fov = fov
        self.resolution = resolution
        self.seed = seed
        self.cache_samples = cache_samples
        self.cache_limit = int(cache_mb * 1024 * 1024)
        self._cache: "OrderedDict[str, List[np.ndarray]]" = OrderedDict()
        self._cache_bytes = 0
        self._cache_lock = threading.Lock()
        self._projection: Optional[ProjectionFeatureSource] = None

        logger.info(f"Dataset manager initialized: {len(self.samples)} samples, "
                    f"{len(self.centers)} viewports, source={feature_source}, profile={pyramid_profile}")

    def __len__(self) -> int:
        return len(self.samples)

    def index_of(self, sample_id: str) -> int:
        for index, sample in enumerate(self.samples):
            if sample.sample_id == sample_id:
                return index
        raise ManifestError(f"Unknown sample id {sample_id!r}")

    @property
    def targets(self) -> np.ndarray:
        return np.array([s.mos for s in self.samples])

    def validate(self):
        """Check every sample's inputs exist before any work starts."""
        if not self.samples:
            raise ManifestError("Dataset is empty")
        if self.feature_source == 'synthetic':
            return
        for sample in self.samples:
            if sample.path is None:
                raise ManifestError(f"Sample {sample.sample_id} (line {sample.line}) has no path")
            if sample.path.is_dir():
                for index in range(len(self.centers)):
                    vp_path = sample.path / viewport_file_name(index)
                    if not vp_path.is_file():
                        raise ManifestError(
                            f"Sample {sample.sample_id} (line {sample.line}): missing feature file {vp_path}")
            elif sample.path.is_file():
                if sample.path.suffix.lower() not in IMAGE_SUFFIXES:
                    raise ManifestError(
                        f"Sample {sample.sample_id} (line {sample.line}): {sample.path} is neither "
                        f"a feature directory nor an image")
            else:
                raise ManifestError(f"Sample {sample.sample_id} (line {sample.line}): path not found: {sample.path}")

    def _synthetic_seed(self, sample_id: str, viewport: int) -> int:
        key = zlib.crc32(sample_id.encode('utf-8'))
        return int(np.random.SeedSequence([self.seed, key, viewport]).generate_state(1)[0])

    def _pyramids(self, sample: Sample) -> List[FeaturePyramid]:
        if self.feature_source == 'synthetic':
            return [synthesize_pyramid(self._synthetic_seed(sample.sample_id, i), self.profile)
                    for i in range(len(self.centers))]

        if sample.path is not None and sample.path.is_dir():
            pyramids = []
            for index in range(len(self.centers)):
                vp_path = sample.path / viewport_file_name(index)
                if not vp_path.is_file():
                    raise ManifestError(f"Sample {sample.sample_id}: missing feature file {vp_path}")
                pyramids.append(read_pyramid(vp_path))
            return pyramids

        if self._projection is None:
            self._projection = ProjectionFeatureSource(self.shapes, self.seed)
        try:
            image = load_equirect(sample.path)
        except FileFormatError as e:
            raise ManifestError(f"Sample {sample.sample_id}: {e}") from e
        return [self._projection.pyramid(render_viewport(image, ViewportSpec(c, self.fov, self.resolution)))
                for c in self.centers]

    def load(self, index: int) -> List[np.ndarray]:
        """Four (N, C, H, W) level stacks for sample `index`."""
        sample = self.samples[index]
        with self._cache_lock:
            cached = self._cache.get(sample.sample_id)
            if cached is not None:
                self._cache.move_to_end(sample.sample_id)
        if cached is not None:
            return cached

        pyramids = self._pyramids(sample)
        for pyramid in pyramids:
            if pyramid.channel_profile != tuple(s[0] for s in self.shapes):
                raise ShapeError(f"Sample {sample.sample_id}: channel profile {pyramid.channel_profile} "
                                 f"does not match profile {self.profile!r}")
        stacks = stack_pyramids(pyramids)

        if self.cache_samples:
            self._remember(sample.sample_id, stacks)
        return stacks

    def _remember(self, sample_id: str, stacks: List[np.ndarray]):
        size = sum(stack.nbytes for stack in stacks)
        if size > self.cache_limit:
            return
        with self._cache_lock:
            if sample_id in self._cache:
                return
            self._cache[sample_id] = stacks
            self._cache_bytes += size
            while self._cache_bytes > self.cache_limit:
                evicted_id, evicted = self._cache.popitem(last=False)
                self._cache_bytes -= sum(stack.nbytes for stack in evicted)
                logger.debug(f"Evicted sample {evicted_id} from the cache")

    @property
    def cache_bytes(self) -> int:
        with self._cache_lock:
            return self._cache_bytes

    def cached_ids(self) -> List[str]:
        """Cached sample ids, least recently used first."""
        with self._cache_lock:
            return list(self._cache)


class PrefetchLoader:
    """Loads samples on a worker thread ahead of the consumer, preserving order."""

    _DONE = object()

    def __init__(self, dataset: DatasetManager, order: Sequence[int], prefetch: int = 4):
        self.dataset = dataset
        self.order = list(order)
        self._queue: Queue = Queue(maxsize=max(1, prefetch))
        self._stop = threading.Event()
        self._worker = threading.Thread(target=self._run, name='ahgcn-prefetch', daemon=True)

    def _run(self):
        try:
            for index in self.order:
                if self._stop.is_set():
                    return
                self._queue.put((index, self.dataset.load(index)))
        except Exception as e:
            self._queue.put(e)
            return
        self._queue.put(self._DONE)

    def __iter__(self) -> Iterator[Tuple[int, List[np.ndarray]]]:
        self._worker.start()
        try:
            while True:
                item = self._queue.get()
                if item is self._DONE:
                    return
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            self._stop.set()
            # unblock a worker waiting on a full queue
            while not self._queue.empty():
                self._queue.get_nowait()
