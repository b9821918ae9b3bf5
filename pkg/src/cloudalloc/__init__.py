"""Heterogeneous multi-provider instance allocation with a Cluster Autoscaler baseline."""

__version__ = "0.1.0"
