"""
Training and evaluation loops for AHGCN.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import psutil

from src.errors import ConfigError, ManifestError
from src.model.params import ModelParams, check_params, init_params
from src.model.pipeline import QualityModel
from src.training.dataset import DatasetManager, PrefetchLoader
from src.training.optimizer import AdamState, adam_step, mse_loss, step_schedule

logger = logging.getLogger(__name__)

CheckpointCallback = Callable[[int, ModelParams, AdamState], None]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for one training run."""
    batch_size: int = 16
    epochs: int = 40
    lr_predictor: float = 1e-3
    lr_decay: float = 0.25
    lr_decay_every: int = 40
    seed: int = 0
    k: int = 5
    delta: float = math.radians(45.0)
    mos_scale: float = 1.0
    checkpoint_every: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.lr_decay_every < 1:
            raise ConfigError("batch_size, epochs and lr_decay_every must be positive")
        if not self.lr_predictor > 0:
            raise ConfigError(f"lr_predictor must be positive, got {self.lr_predictor}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.k < 0 or not self.delta > 0 or not self.mos_scale > 0:
            raise ConfigError("k must be non-negative; delta and mos_scale positive")


@dataclass
class TrainResult:
    params: ModelParams
    history: List[Dict[str, float]] = field(default_factory=list)
    adam: Optional[AdamState] = None


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Learning rate for a zero-based epoch."""
    return step_schedule(config.lr_predictor, epoch, config.lr_decay, config.lr_decay_every)


def _rss_mb() -> float:
    return psutil.Process().memory_info().rss / (1024 * 1024)


def train(model: QualityModel, dataset: DatasetManager, config: TrainConfig,
          params: Optional[ModelParams] = None, adam: Optional[AdamState] = None,
          prefetch: int = 4, on_checkpoint: Optional[CheckpointCallback] = None) -> TrainResult:
    """
    Train descriptor and predictor jointly with MSE and Adam.

    Args:
        model: Quality model (descriptor, hypergraph builder, predictor)
        dataset: Training samples
        config: Optimization settings
        params: Starting parameters (fresh ones from config.seed if None)
        adam: Optimizer state to resume from
        prefetch: Samples loaded ahead of the consuming step
        on_checkpoint: Called as (epoch, params, adam) every config.checkpoint_every epochs

    Returns:
        TrainResult with the final parameters and one {epoch, lr, train_mse} row per epoch
    """
    if len(dataset) == 0:
        raise ManifestError("Training set is empty")
    dataset.validate()

    if params is None:
        params = init_params(model.descriptor, model.predictor, config.seed)
    else:
        check_params(params, model.descriptor, model.predictor)
    if adam is None:
        adam = AdamState(beta1=config.beta1, beta2=config.beta2, epsilon=config.adam_epsilon)

    shuffle_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    targets = dataset.targets / config.mos_scale

    logger.info(f"Training: {len(dataset)} samples, {config.epochs} epochs, batch {config.batch_size}, "
                f"{params.num_parameters()} parameters")

    history: List[Dict[str, float]] = []
    for epoch in range(config.epochs):
        lr = lr_at_epoch(config, epoch)
        order = shuffle_rng.permutation(len(dataset))
        squared_error = 0.0

        batch_index: List[int] = []
        batch_stacks: List[List[np.ndarray]] = []
        loader = PrefetchLoader(dataset, order, prefetch)
        for position, (index, stacks) in enumerate(loader):
            batch_index.append(index)
            batch_stacks.append(stacks)
            if len(batch_index) < config.batch_size and position < len(order) - 1:
                continue

            quality, tape = model.forward(batch_stacks, params, 'train', dropout_rng, record=True)
            loss, grad_quality = mse_loss(quality, targets[batch_index])
            grads = model.backward(tape, grad_quality)
            adam_step(params.tensors, grads, adam, lr)
            squared_error += loss * len(batch_index)
            batch_index, batch_stacks = [], []

        train_mse = squared_error / len(dataset)
        if not math.isfinite(train_mse):
            raise FloatingPointError(f"Training diverged at epoch {epoch} (mse={train_mse})")
        history.append({'epoch': epoch, 'lr': lr, 'train_mse': train_mse})
        logger.info(f"Epoch {epoch + 1}/{config.epochs}: lr={lr:.3g} mse={train_mse:.6g} rss={_rss_mb():.0f}MB")

        if on_checkpoint and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            on_checkpoint(epoch, params, adam)

    return TrainResult(params, history, adam)


def evaluate(model: QualityModel, dataset: DatasetManager, params: ModelParams,
             mos_scale: float = 1.0, prefetch: int = 4) -> np.ndarray:
    """
    Eval-mode quality prediction, one forward pass per sample.

    Returns:
        Predictions on the MOS scale, in dataset order
    """
    if len(dataset) == 0:
        raise ManifestError("Evaluation set is empty")
    check_params(params, model.descriptor, model.predictor)
    dataset.validate()

    predictions = np.empty(len(dataset))
    for index, stacks in PrefetchLoader(dataset, range(len(dataset)), prefetch):
        quality, _ = model.forward([stacks], params, 'eval')
        predictions[index] = quality[0] * mos_scale
    logger.info(f"Evaluated {len(dataset)} samples")
    return predictions
