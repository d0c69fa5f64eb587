"""
Typed view of the settings for one command execution.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from src.errors import ConfigError
from src.geometry.sphere_geometry import ViewportSpec, default_viewport_centers
from src.model.descriptor import PYRAMID_PROFILES
from src.model.hypergraph import HypergraphBuilder, NormalizedOperator
from src.model.params import DescriptorConfig, PredictorConfig
from src.model.pipeline import QualityModel
from src.system.settings_manager import SettingsManager
from src.training.dataset import DatasetManager, Sample
from src.training.trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    """Command-scoped settings resolved from a SettingsManager."""
    manifest: Optional[Path]
    output_dir: Path
    seed: int
    feature_source: str
    pyramid_profile: str
    centers: tuple
    fov_deg: float
    resolution: int
    hyperedges: str
    structure: str
    krasula_threshold: float
    pair_labels: Optional[Path]
    cache_samples: bool
    cache_mb: float
    prefetch: int
    descriptor: DescriptorConfig
    predictor: PredictorConfig
    train: TrainConfig

    @classmethod
    def from_settings(cls, settings: SettingsManager, output_dir: str = 'runs') -> 'RunConfig':
        """
        Build the run configuration.

        Args:
            settings: Loaded and validated settings
            output_dir: Directory for the command's artifacts

        Returns:
            RunConfig
        """
        get = settings.get
        centers = tuple(default_viewport_centers(get('data.n_viewports'), get('data.centers_deg')))
        profile = get('data.pyramid_profile')
        channels = tuple(shape[0] for shape in PYRAMID_PROFILES[profile])

        descriptor = DescriptorConfig(
            channels=channels,
            levels=tuple(get('model.levels')),
            reduced_channels=get('model.reduced_channels'),
            pool_grid=get('model.pool_grid'),
            level_dim=get('model.level_dim'),
        )
        predictor = PredictorConfig(
            layer_dims=tuple(get('model.layer_dims')),
            dropout_rate=float(get('model.dropout')),
            bn_momentum=float(get('model.bn_momentum')),
            bn_epsilon=float(get('model.bn_epsilon')),
            residual=get('model.residual'),
        )
        train = TrainConfig(
            batch_size=get('training.batch_size'),
            epochs=get('training.epochs'),
            lr_predictor=float(get('training.lr_predictor')),
            lr_decay=float(get('training.lr_decay')),
            lr_decay_every=get('training.lr_decay_every'),
            seed=get('training.seed'),
            k=get('training.k'),
            delta=math.radians(get('geometry.delta_deg')),
            mos_scale=float(get('training.mos_scale')),
            checkpoint_every=get('training.checkpoint_every'),
            beta1=float(get('training.beta1')),
            beta2=float(get('training.beta2')),
            adam_epsilon=float(get('training.adam_epsilon')),
        )
        if train.k > len(centers) - 1:
            raise ConfigError(f"training.k = {train.k} needs at least {train.k + 1} viewports, have {len(centers)}")

        manifest = get('data.manifest')
        pair_labels = get('metrics.pair_labels')
        return cls(
            manifest=Path(manifest) if manifest else None,
            output_dir=Path(output_dir),
            seed=train.seed,
            feature_source=get('data.feature_source'),
            pyramid_profile=profile,
            centers=centers,
            fov_deg=float(get('geometry.fov_deg')),
            resolution=get('geometry.resolution'),
            hyperedges=get('model.hyperedges'),
            structure=get('model.structure'),
            krasula_threshold=float(get('metrics.krasula_threshold')),
            pair_labels=Path(pair_labels) if pair_labels else None,
            cache_samples=get('data.cache_samples'),
            cache_mb=float(get('data.cache_mb')),
            prefetch=get('data.prefetch'),
            descriptor=descriptor,
            predictor=predictor,
            train=train,
        )

    def viewport_specs(self) -> List[ViewportSpec]:
        return [ViewportSpec(c, self.fov_deg, self.resolution) for c in self.centers]

    def hypergraph_builder(self) -> HypergraphBuilder:
        return HypergraphBuilder(list(self.centers), self.train.delta, self.train.k,
                                 hyperedges=self.hyperedges, structure=self.structure)

    def build_operator(self, features: np.ndarray) -> NormalizedOperator:
        """Propagation operator for one sample under the configured structure and hyperedges."""
        return self.hypergraph_builder().build(np.asarray(features, dtype=np.float64))

    def quality_model(self) -> QualityModel:
        return QualityModel(self.descriptor, self.predictor, self.hypergraph_builder())

    def dataset(self, samples: Sequence[Sample]) -> DatasetManager:
        return DatasetManager(samples, self.centers, feature_source=self.feature_source,
                              pyramid_profile=self.pyramid_profile, fov=self.fov_deg,
                              resolution=self.resolution, seed=self.seed,
                              cache_samples=self.cache_samples, cache_mb=self.cache_mb)
