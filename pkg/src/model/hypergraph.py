"""
Hypergraph Constructor for AHGCN
Location-based and content-based hyperedges, incidence matrix concatenation,
and the normalized propagation operator.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from src.errors import HypergraphError, IsolatedNodeError, ShapeError
from src.geometry.sphere_geometry import SphereCoord, pairwise_angular_distances

logger = logging.getLogger(__name__)

SIMILARITY_EPSILON = 1e-12
LOCATION = 'location'
CONTENT = 'content'
_LABEL_PREFIX = {LOCATION: 'loc', CONTENT: 'con'}


@dataclass
class IncidenceMatrix:
    """Binary N x M node/hyperedge incidence with one label per column."""
    n_nodes: int
    matrix: np.ndarray
    labels: List[str] = field(default_factory=list)

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != self.n_nodes:
            raise ShapeError(f"Incidence matrix must have {self.n_nodes} rows, got shape {matrix.shape}")
        if matrix.shape[1] != len(self.labels):
            raise ShapeError(f"{matrix.shape[1]} hyperedges but {len(self.labels)} labels")
        if not np.all((matrix == 0.0) | (matrix == 1.0)):
            raise HypergraphError("Incidence entries must be 0 or 1")
        keep = matrix.sum(axis=0) > 0
        if not np.all(keep):
            logger.debug(f"Dropping {int((~keep).sum())} empty hyperedges")
        self.matrix = matrix[:, keep]
        self.labels = [label for label, kept in zip(self.labels, keep) if kept]

    @classmethod
    def empty(cls, n_nodes: int) -> 'IncidenceMatrix':
        return cls(n_nodes, np.zeros((n_nodes, 0)), [])

    @property
    def n_edges(self) -> int:
        return self.matrix.shape[1]

    @property
    def node_degrees(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    @property
    def edge_degrees(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    def column_names(self) -> List[str]:
        counters = {}
        names = []
        for label in self.labels:
            index = counters.get(label, 0)
            counters[label] = index + 1
            names.append(f"{_LABEL_PREFIX.get(label, label)}_{index}")
        return names

    def members(self, edge: int) -> List[int]:
        """Node indices of one hyperedge."""
        return [int(i) for i in np.flatnonzero(self.matrix[:, edge])]


@dataclass
class NormalizedOperator:
    """Dense symmetric propagation operator and the degree diagonals it came from."""
    operator: np.ndarray
    node_degrees: np.ndarray
    edge_degrees: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.operator.shape[0]


def build_location_hyperedges(centers: Sequence[SphereCoord], delta: float) -> IncidenceMatrix:
    """
    One hyperedge per viewport collecting every viewport within delta of it.

    Args:
        centers: Viewport centers
        delta: Angular threshold in radians

    Returns:
        N x N IncidenceMatrix; column i is the hyperedge centred on node i
    """
    if len(centers) < 1:
        raise HypergraphError("Location hyperedges need at least one viewport")
    if not delta > 0:
        raise HypergraphError(f"Angular threshold must be positive, got {delta}")
    distances = pairwise_angular_distances(centers)
    matrix = (distances <= delta).astype(np.float64)
    np.fill_diagonal(matrix, 1.0)
    # column i lists the neighborhood of node i; distances are symmetric
    return IncidenceMatrix(len(centers), matrix.T.copy(), [LOCATION] * len(centers))


def cosine_similarity(x: np.ndarray, y: np.ndarray) -> float:
    """(x . y) / max(|x| |y|, eps)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"Cosine similarity of vectors with lengths {x.size} and {y.size}")
    denom = max(float(np.linalg.norm(x) * np.linalg.norm(y)), SIMILARITY_EPSILON)
    return float(x @ y) / denom


def similarity_matrix(features: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities of the rows of features."""
    features = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(features, axis=1)
    denom = np.maximum(np.outer(norms, norms), SIMILARITY_EPSILON)
    return (features @ features.T) / denom


def build_content_hyperedges(features: np.ndarray, k: int) -> IncidenceMatrix:
    """
    One hyperedge per viewport: the viewport plus its k most similar others.

    Similarity ties go to the lower node index. k = 0 disables content
    hyperedges and returns an empty incidence matrix.

    Args:
        features: N x D viewport features
        k: Number of semantic neighbors

    Returns:
        N x N IncidenceMatrix, or N x 0 when k = 0
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"Features must be N x D, got shape {features.shape}")
    n_nodes = features.shape[0]
    if int(k) != k or not (0 <= k <= n_nodes - 1):
        raise HypergraphError(f"k must be an integer in [0, {n_nodes - 1}], got {k}")
    if k == 0:
        return IncidenceMatrix.empty(n_nodes)

    similarity = similarity_matrix(features)
    matrix = np.zeros((n_nodes, n_nodes))
    index = np.arange(n_nodes)
    for node in range(n_nodes):
        others = index[index != node]
        # lexsort: last key is primary
        order = np.lexsort((others, -similarity[node, others]))
        matrix[others[order[:k]], node] = 1.0
        matrix[node, node] = 1.0
    return IncidenceMatrix(n_nodes, matrix, [CONTENT] * n_nodes)


def concat_hypergraphs(parts: Sequence[IncidenceMatrix]) -> IncidenceMatrix:
    """Column-wise concatenation; empty parts contribute nothing."""
    if not parts:
        raise HypergraphError("Nothing to concatenate")
    n_nodes = parts[0].n_nodes
    for part in parts:
        if part.n_nodes != n_nodes:
            raise ShapeError(f"Cannot concatenate hypergraphs with {n_nodes} and {part.n_nodes} nodes")
    matrix = np.concatenate([part.matrix for part in parts], axis=1)
    labels = [label for part in parts for label in part.labels]
    return IncidenceMatrix(n_nodes, matrix, labels)


def normalize(incidence: IncidenceMatrix) -> NormalizedOperator:
    """
    Normalized operator D_v^-1/2 E D_e^-1 E^T D_v^-1/2 with uniform hyperedge weights.

    Raises:
        IsolatedNodeError: if some node belongs to no hyperedge
    """
    matrix = incidence.matrix
    node_degrees = matrix.sum(axis=1)
    edge_degrees = matrix.sum(axis=0)
    isolated = np.flatnonzero(node_degrees == 0)
    if isolated.size:
        raise IsolatedNodeError(int(isolated[0]))

    inv_sqrt_dv = 1.0 / np.sqrt(node_degrees)
    scaled = matrix * inv_sqrt_dv[:, None]
    operator = (scaled / edge_degrees[None, :]) @ scaled.T
    # exact symmetry regardless of summation order
    operator = 0.5 * (operator + operator.T)
    return NormalizedOperator(operator, node_degrees, edge_degrees)


def graph_operator(centers: Sequence[SphereCoord], delta: float) -> NormalizedOperator:
    """
    Pairwise-graph baseline: D^-1/2 A D^-1/2 with A the thresholded
    angular adjacency including self-loops.
    """
    if not delta > 0:
        raise HypergraphError(f"Angular threshold must be positive, got {delta}")
    adjacency = (pairwise_angular_distances(centers) <= delta).astype(np.float64)
    np.fill_diagonal(adjacency, 1.0)
    degrees = adjacency.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degrees)
    operator = adjacency * inv_sqrt[:, None] * inv_sqrt[None, :]
    return NormalizedOperator(operator, degrees, np.ones(0))


def identity_operator(n_nodes: int) -> NormalizedOperator:
    """No interaction between viewports (fully-connected baseline)."""
    return NormalizedOperator(np.eye(n_nodes), np.ones(n_nodes), np.ones(n_nodes))


class HypergraphBuilder:
    """Builds the per-sample propagation operator for a fixed viewport layout."""

    def __init__(self, centers: Sequence[SphereCoord], delta: float, k: int,
                 hyperedges: str = 'both', structure: str = 'hypergraph'):
        """
        Initialize hypergraph builder.

        Args:
            centers: Viewport centers (shared by every sample)
            delta: Location threshold in radians
            k: Content neighbors per hyperedge
            hyperedges: 'both', 'location' or 'content'
            structure: 'hypergraph', 'graph' or 'none'
        """
        if hyperedges not in ('both', 'location', 'content'):
            raise HypergraphError(f"Unknown hyperedge selection {hyperedges!r}")
        if structure not in ('hypergraph', 'graph', 'none'):
            raise HypergraphError(f"Unknown structure {structure!r}")
        if structure == 'hypergraph' and hyperedges == 'content' and k == 0:
            raise HypergraphError("Content-only hyperedges need k >= 1")
        if not (0 <= k <= len(centers) - 1):
            raise HypergraphError(f"k must be in [0, {len(centers) - 1}], got {k}")

        self.centers = list(centers)
        self.delta = delta
        self.k = k
        self.hyperedges = hyperedges
        self.structure = structure

        # centers are fixed, so the location part and non-adaptive operators are computed once
        self._location = build_location_hyperedges(self.centers, delta)
        self._static: Optional[NormalizedOperator] = None
        if structure == 'graph':
            self._static = graph_operator(self.centers, delta)
        elif structure == 'none':
            self._static = identity_operator(len(self.centers))
        elif hyperedges == 'location' or k == 0:
            self._static = normalize(self._location)

        logger.info(f"Hypergraph builder initialized: N={len(self.centers)}, "
                    f"delta={np.degrees(delta):.1f} deg, k={k}, hyperedges={hyperedges}, structure={structure}")

    @property
    def n_nodes(self) -> int:
        return len(self.centers)

    def incidence(self, features: np.ndarray) -> IncidenceMatrix:
        """Incidence matrix E for one sample's features."""
        if features.shape[0] != self.n_nodes:
            raise ShapeError(f"Expected features for {self.n_nodes} viewports, got {features.shape[0]}")
        parts = []
        if self.hyperedges in ('both', 'location'):
            parts.append(self._location)
        if self.hyperedges in ('both', 'content'):
            parts.append(build_content_hyperedges(features, self.k))
        return concat_hypergraphs(parts)

    def build(self, features: np.ndarray) -> NormalizedOperator:
        """Normalized operator for one sample; content hyperedges follow the current features."""
        if self._static is not None:
            return self._static
        return normalize(self.incidence(features))
