"""
Exception types for AHGCN.
Library code raises these; the entry point turns them into log records and exit codes.
"""


class AhgcnError(Exception):
    """Base class for all AHGCN errors."""


class ConfigError(AhgcnError, ValueError):
    """Invalid, unknown or inconsistent configuration."""


class GeometryError(AhgcnError, ValueError):
    """Invalid sphere coordinates, viewport specs or images."""


class ShapeError(AhgcnError, ValueError):
    """Tensor shapes that do not fit together."""


class HypergraphError(AhgcnError, ValueError):
    """Invalid hypergraph construction request."""


class IsolatedNodeError(HypergraphError):
    """A node belongs to no hyperedge, so D_v is singular."""

    def __init__(self, node: int):
        super().__init__(f"Node {node} has degree 0 (belongs to no hyperedge)")
        self.node = node


class TapeError(AhgcnError, RuntimeError):
    """Backward pass requested without a matching recorded forward pass."""


class FileFormatError(AhgcnError, ValueError):
    """Malformed AHGF/AHGC file or unreadable image."""


class ManifestError(AhgcnError, ValueError):
    """Dataset manifest problem (parse error, missing files)."""


class CheckpointError(AhgcnError, ValueError):
    """Checkpoint does not match the configured model."""


class FitError(AhgcnError, ValueError):
    """Logistic fit is undefined for the given data."""


class MetricError(AhgcnError, ValueError):
    """Metric undefined for the given inputs."""
