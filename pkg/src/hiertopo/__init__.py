"""Hierarchical topological mapping and loop-closure detection."""

from .descriptors import (
    DescriptorSet,
    GlobalDescriptor,
    Metric,
    chi_squared_distance,
    euclidean_distance,
    normalized_location_similarities,
    read_descriptor_set,
    update_location_descriptor,
    write_descriptor_set,
)
from .mapping import EventKind, HierarchicalMap, MapConfig, MapEvent, MapMode
from .metrics import ExperimentReport, GroundTruth

__version__ = "0.1.0"

__all__ = [
    "DescriptorSet",
    "EventKind",
    "ExperimentReport",
    "GlobalDescriptor",
    "GroundTruth",
    "HierarchicalMap",
    "MapConfig",
    "MapEvent",
    "MapMode",
    "Metric",
    "chi_squared_distance",
    "euclidean_distance",
    "normalized_location_similarities",
    "read_descriptor_set",
    "update_location_descriptor",
    "write_descriptor_set",
    "__version__",
]
