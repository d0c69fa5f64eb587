"""
Viewport Quality Predictor for AHGCN
Stacked hypergraph convolution layers sigma(BN(E H W1 + H W2)) with inverted
dropout, mean pooling over viewports, and the matching reverse-mode pass.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import block_diag
from scipy.special import expit

from src.errors import ShapeError, TapeError
from src.model.params import ModelParams, PredictorConfig, layer_names

logger = logging.getLogger(__name__)

TRAIN = 'train'
EVAL = 'eval'


def softplus(x):
    """log(1 + exp(x)), evaluated as max(x, 0) + log1p(exp(-|x|))."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    mode: str


@dataclass
class LayerRecord:
    """Everything one layer's backward pass needs."""
    operator: np.ndarray
    h_in: np.ndarray
    h_drop: np.ndarray
    mask: Optional[np.ndarray]
    propagated: np.ndarray
    bn: BatchNormCache
    z: np.ndarray
    residual: bool
    weights: Dict[str, np.ndarray]


@dataclass
class ForwardTape:
    """Recorded predictor forward pass over a batch of samples."""
    mode: str
    segments: List[Tuple[int, int]]
    records: List[LayerRecord] = field(default_factory=list)


def batchnorm_forward(h: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      running_mean: np.ndarray, running_var: np.ndarray, mode: str,
                      momentum: float = 0.1, epsilon: float = 1e-5
                      ) -> Tuple[np.ndarray, BatchNormCache, np.ndarray, np.ndarray]:
    """
    Batch normalization over all rows (samples x viewports).

    Train mode normalizes with the biased batch variance and moves the running
    statistics towards the batch statistics (unbiased variance); eval mode uses
    the running statistics unchanged.

    Returns:
        (output, cache, new running mean, new running variance)
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != gamma.shape[0]:
        raise ShapeError(f"Batch norm over {gamma.shape[0]} features got input of shape {h.shape}")

    if mode == TRAIN:
        rows = h.shape[0]
        if rows < 2:
            raise ShapeError("Train-mode batch norm needs at least 2 rows")
        mean = h.mean(axis=0)
        var = ((h - mean) ** 2).mean(axis=0)
        inv_std = 1.0 / np.sqrt(var + epsilon)
        xhat = (h - mean) * inv_std
        new_mean = (1.0 - momentum) * running_mean + momentum * mean
        new_var = (1.0 - momentum) * running_var + momentum * var * rows / (rows - 1)
    elif mode == EVAL:
        inv_std = 1.0 / np.sqrt(running_var + epsilon)
        xhat = (h - running_mean) * inv_std
        new_mean, new_var = running_mean, running_var
    else:
        raise ValueError(f"Unknown mode {mode!r}")

    return gamma * xhat + beta, BatchNormCache(xhat, inv_std, mode), new_mean, new_var


def batchnorm_backward(grad_out: np.ndarray, cache: BatchNormCache, gamma: np.ndarray
                       ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_input, grad_gamma, grad_beta); train mode includes the batch-statistics path."""
    grad_gamma = (grad_out * cache.xhat).sum(axis=0)
    grad_beta = grad_out.sum(axis=0)
    grad_xhat = grad_out * gamma
    if cache.mode == TRAIN:
        rows = grad_out.shape[0]
        grad_in = (cache.inv_std / rows) * (
            rows * grad_xhat
            - grad_xhat.sum(axis=0)
            - cache.xhat * (grad_xhat * cache.xhat).sum(axis=0))
    else:
        grad_in = grad_xhat * cache.inv_std
    return grad_in, grad_gamma, grad_beta


def hgcn_layer_forward(operator: np.ndarray, h: np.ndarray, params: ModelParams, layer: int,
                       config: PredictorConfig, mode: str, tape: Optional[ForwardTape] = None,
                       rng: Optional[np.random.Generator] = None, final: bool = False) -> np.ndarray:
    """
    One HGCN layer: softplus(BN(E H W1 + H W2)).

    Dropout (inverted, rate config.dropout_rate) hits the layer input in train
    mode, never on the final layer. Train mode updates the layer's running
    statistics in params.buffers.

    Args:
        operator: N x N normalized operator (block diagonal for a batch)
        h: N x d_in node features
        params: Model parameters
        layer: Layer index
        config: Predictor layout
        mode: 'train' or 'eval'
        tape: Tape to append this layer's record to
        rng: Dropout mask generator (train mode)
        final: Whether this is the last layer

    Returns:
        N x d_out node features
    """
    names = layer_names(layer)
    w1 = params.tensors[names['W1']]
    w2 = params.tensors[names['W2']]
    gamma = params.tensors[names['bn_gamma']]
    beta = params.tensors[names['bn_beta']]

    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != w1.shape[0]:
        raise ShapeError(f"Layer {layer} expects {w1.shape[0]} input features, got shape {h.shape}")
    if operator.shape != (h.shape[0], h.shape[0]):
        raise ShapeError(f"Operator shape {operator.shape} does not match {h.shape[0]} nodes")

    mask = None
    h_drop = h
    rate = config.dropout_rate
    if mode == TRAIN and rate > 0.0 and not final:
        if rng is None:
            raise ValueError("Train-mode dropout needs a random generator")
        keep = 1.0 - rate
        mask = (rng.random(h.shape) < keep) / keep
        h_drop = h * mask

    propagated = operator @ h_drop
    pre = propagated @ w1 + h_drop @ w2
    z, cache, new_mean, new_var = batchnorm_forward(
        pre, gamma, beta, params.buffers[names['bn_running_mean']],
        params.buffers[names['bn_running_var']], mode, config.bn_momentum, config.bn_epsilon)
    if mode == TRAIN:
        params.buffers[names['bn_running_mean']] = new_mean
        params.buffers[names['bn_running_var']] = new_var

    out = softplus(z)
    residual = config.residual == 'identity' and w1.shape[0] == w1.shape[1]
    if residual:
        out = out + h

    if tape is not None:
        tape.records.append(LayerRecord(
            operator=operator, h_in=h, h_drop=h_drop, mask=mask, propagated=propagated,
            bn=cache, z=z, residual=residual,
            weights={'W1': w1, 'W2': w2, 'bn_gamma': gamma}))
    return out


def _segments(sizes: Sequence[int]) -> List[Tuple[int, int]]:
    bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def forward_batch(operators: Sequence[np.ndarray], features: Sequence[np.ndarray],
                  params: ModelParams, config: PredictorConfig, mode: str,
                  rng: Optional[np.random.Generator] = None, record: bool = False
                  ) -> Tuple[np.ndarray, np.ndarray, Optional[ForwardTape]]:
    """
    Predict a batch of samples jointly; batch norm sees every viewport row.

    Args:
        operators: Per-sample N_b x N_b normalized operators
        features: Per-sample N_b x D hierarchical features
        params: Model parameters
        config: Predictor layout
        mode: 'train' or 'eval'
        rng: Dropout generator
        record: Keep a ForwardTape for network_backward

    Returns:
        (Q per sample, per-viewport scores for all rows, tape or None)
    """
    if len(operators) != len(features) or not operators:
        raise ShapeError("Need one operator per sample and at least one sample")
    if config.layer_dims[0] != np.asarray(features[0]).shape[1]:
        raise ShapeError(f"Predictor expects {config.layer_dims[0]}-dim features, "
                         f"got {np.asarray(features[0]).shape[1]}")

    segments = _segments([np.asarray(f).shape[0] for f in features])
    operator = block_diag(*operators) if len(operators) > 1 else np.asarray(operators[0], dtype=np.float64)
    h = np.concatenate([np.asarray(f, dtype=np.float64) for f in features], axis=0)
    tape = ForwardTape(mode=mode, segments=segments) if record else None

    for layer in range(config.n_layers):
        h = hgcn_layer_forward(operator, h, params, layer, config, mode, tape, rng,
                               final=layer == config.n_layers - 1)

    scores = h[:, 0]
    quality = np.array([scores[a:b].mean() for a, b in segments])
    return quality, scores, tape


def predict(operator: np.ndarray, features: np.ndarray, params: ModelParams,
            config: PredictorConfig, mode: str = EVAL,
            rng: Optional[np.random.Generator] = None) -> Tuple[float, np.ndarray]:
    """
    Quality score of one image: the mean of the per-viewport scores.

    Returns:
        (Q, per-viewport scores H^n)
    """
    quality, scores, _ = forward_batch([operator], [features], params, config, mode, rng)
    return float(quality[0]), scores


def network_backward(tape: Optional[ForwardTape], grad_quality
                     ) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """
    Reverse-mode gradients of the predictor.

    Args:
        tape: Tape from a recorded train-mode forward_batch
        grad_quality: dLoss/dQ, scalar or one value per sample

    Returns:
        (gradients keyed by tensor name, gradient w.r.t. the stacked input features)
    """
    if tape is None or not tape.records:
        raise TapeError("network_backward needs a forward pass run with record=True")
    if tape.mode != TRAIN:
        raise TapeError(f"network_backward needs a train-mode tape, got {tape.mode!r}")

    grad_quality = np.broadcast_to(np.asarray(grad_quality, dtype=np.float64), (len(tape.segments),))
    rows = tape.segments[-1][1]
    grad_h = np.zeros((rows, 1))
    for (a, b), g in zip(tape.segments, grad_quality):
        grad_h[a:b, 0] = g / (b - a)

    grads: Dict[str, np.ndarray] = {}
    for layer in reversed(range(len(tape.records))):
        rec = tape.records[layer]
        names = layer_names(layer)

        grad_z = grad_h * expit(rec.z)
        grad_pre, grads[names['bn_gamma']], grads[names['bn_beta']] = batchnorm_backward(
            grad_z, rec.bn, rec.weights['bn_gamma'])

        grads[names['W1']] = rec.propagated.T @ grad_pre
        grads[names['W2']] = rec.h_drop.T @ grad_pre
        grad_drop = rec.operator.T @ (grad_pre @ rec.weights['W1'].T) + grad_pre @ rec.weights['W2'].T
        grad_in = grad_drop * rec.mask if rec.mask is not None else grad_drop
        if rec.residual:
            grad_in = grad_in + grad_h
        grad_h = grad_in

    return grads, grad_h
