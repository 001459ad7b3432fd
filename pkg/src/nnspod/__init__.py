"""Neural-network shifted POD for advection-dominated snapshot sets."""

from .grid import StructuredGrid
from .snapshots import SnapshotMatrix
from .pod import PodResult, pod, projection_error, modes_for_threshold

__all__ = [
    "StructuredGrid",
    "SnapshotMatrix",
    "PodResult",
    "pod",
    "projection_error",
    "modes_for_threshold",
]

__version__ = "0.1.0"
