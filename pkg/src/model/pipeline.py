"""
End-to-end AHGCN model: descriptor -> hypergraph constructor -> HGCN predictor.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import ShapeError
from src.model.descriptor import DescriptorTape, describe_viewports, descriptor_backward
from src.model.hgcn import ForwardTape, forward_batch, network_backward
from src.model.hypergraph import HypergraphBuilder, NormalizedOperator
from src.model.params import DescriptorConfig, ModelParams, PredictorConfig

logger = logging.getLogger(__name__)


@dataclass
class PipelineTape:
    descriptor: DescriptorTape
    predictor: ForwardTape
    operators: List[NormalizedOperator]


class QualityModel:
    """Runs the three AHGCN stages over batches of samples."""

    def __init__(self, descriptor: DescriptorConfig, predictor: PredictorConfig,
                 builder: HypergraphBuilder):
        """
        Initialize quality model.

        Args:
            descriptor: Compaction head layout
            predictor: HGCN stack layout
            builder: Hypergraph constructor for the viewport layout
        """
        if predictor.layer_dims[0] != descriptor.out_dim:
            raise ShapeError(f"Predictor input dim {predictor.layer_dims[0]} does not match "
                             f"descriptor output dim {descriptor.out_dim}")
        self.descriptor = descriptor
        self.predictor = predictor
        self.builder = builder

    def features(self, stacks: Sequence[Sequence[np.ndarray]], params: ModelParams,
                 record: bool = False) -> Tuple[List[np.ndarray], Optional[DescriptorTape]]:
        """
        Hierarchical features for every sample of a batch.

        Args:
            stacks: Per sample, four (N, C, H, W) level stacks
            params: Model parameters
            record: Keep the descriptor tape

        Returns:
            (per-sample N x D feature arrays, tape or None)
        """
        counts = [stack[0].shape[0] for stack in stacks]
        for count in counts:
            if count != self.builder.n_nodes:
                raise ShapeError(f"Sample has {count} viewports, the layout has {self.builder.n_nodes}")
        joined = [np.concatenate([stack[level] for stack in stacks], axis=0)
                  for level in range(len(stacks[0]))]
        x, tape = describe_viewports(joined, params, self.descriptor, record=record)
        bounds = np.cumsum(counts)[:-1]
        return np.split(x, bounds, axis=0), tape

    def forward(self, stacks: Sequence[Sequence[np.ndarray]], params: ModelParams, mode: str,
                rng: Optional[np.random.Generator] = None, record: bool = False
                ) -> Tuple[np.ndarray, Optional[PipelineTape]]:
        """
        Quality scores for a batch.

        Content hyperedges are rebuilt from the current features on every call;
        no gradient flows through the neighbor selection.

        Returns:
            (Q per sample, tape or None)
        """
        features, descriptor_tape = self.features(stacks, params, record=record)
        operators = [self.builder.build(x) for x in features]
        quality, _, predictor_tape = forward_batch(
            [op.operator for op in operators], features, params, self.predictor, mode, rng, record)
        tape = PipelineTape(descriptor_tape, predictor_tape, operators) if record else None
        return quality, tape

    def backward(self, tape: PipelineTape, grad_quality: np.ndarray) -> Dict[str, np.ndarray]:
        """Gradients of every trainable tensor given dLoss/dQ."""
        grads, grad_x = network_backward(tape.predictor, grad_quality)
        descriptor_grads, _ = descriptor_backward(grad_x, tape.descriptor)
        grads.update(descriptor_grads)
        return grads
