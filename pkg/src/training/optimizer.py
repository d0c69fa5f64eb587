"""
Optimization primitives for AHGCN: MSE objective, Adam, learning-rate schedule.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np

from src.errors import ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Per-parameter moment estimates and the shared step counter."""
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def mse_loss(pred: Sequence[float], target: Sequence[float]) -> Tuple[float, np.ndarray]:
    """
    Mean squared error and its gradient with respect to pred.

    Returns:
        (loss, gradient 2 (pred - target) / B)
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise ShapeError(f"MSE of {pred.size} predictions against {target.size} targets")
    if pred.size == 0:
        raise ShapeError("MSE of an empty batch")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / pred.size


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState, lr: float) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One bias-corrected Adam update, applied in place.

    Args:
        params: Name -> parameter array (updated in place)
        grads: Name -> gradient array, one per parameter
        state: Moment estimates (updated in place)
        lr: Step size

    Returns:
        (params, state)
    """
    for name, value in params.items():
        if name not in grads:
            raise ShapeError(f"No gradient for parameter {name}")
        if grads[name].shape != value.shape:
            raise ShapeError(f"Gradient for {name} has shape {grads[name].shape}, parameter {value.shape}")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step

    for name, value in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)

        state.m[name] *= state.beta1
        state.m[name] += (1.0 - state.beta1) * g
        state.v[name] *= state.beta2
        state.v[name] += (1.0 - state.beta2) * (g * g)

        if lr == 0.0:
            continue
        denom = np.sqrt(state.v[name] / bc2) + state.epsilon
        value -= lr * (state.m[name] / bc1) / denom

    return params, state


def step_schedule(lr: float, epoch: int, decay: float = 0.25, every: int = 40) -> float:
    """Step schedule lr * decay ** floor(epoch / every)."""
    if epoch < 0:
        raise ValueError(f"Epoch must be non-negative, got {epoch}")
    return lr * decay ** (epoch // every)
