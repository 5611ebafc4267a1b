"""Tape-style reverse-mode differentiation with first-class gradient nodes."""

from .graph import Graph, Node, UnboundInputError, forward, grad
from .hutchinson import (
    GradHandle,
    HutchinsonProbe,
    cross_jacobian,
    cross_jacobian_frobenius,
    gradient,
    hutchinson_cross_norm,
    sample_probes,
)

__all__ = [
    "Graph",
    "Node",
    "UnboundInputError",
    "forward",
    "grad",
    "GradHandle",
    "HutchinsonProbe",
    "cross_jacobian",
    "cross_jacobian_frobenius",
    "gradient",
    "hutchinson_cross_norm",
    "sample_probes",
]
