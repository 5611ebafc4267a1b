"""Cross-derivative utilities and the Hutchinson Frobenius-norm estimator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .graph import Graph, Node, depends_on, grad

PROBE_KINDS = ("rademacher", "gaussian")


@dataclass(frozen=True)
class GradHandle:
    """Gradient of scalar ``of`` w.r.t. ``wrt``; ``node`` is itself differentiable."""

    wrt: Node
    of: Node
    node: Node

    def component(self, i) -> Node:
        return self.node[i]


@dataclass(frozen=True)
class HutchinsonProbe:
    eta: np.ndarray
    kind: str = "rademacher"


def gradient(of: Node, wrt: Node) -> GradHandle:
    """Reverse sweep from ``of`` (0-dim) to input/alias ``wrt``."""
    if of.shape != ():
        raise ValueError("gradient() needs a 0-dimensional output node")
    if not depends_on(of, wrt):
        raise ValueError(f"{wrt!r} does not reach {of!r}")
    return GradHandle(wrt=wrt, of=of, node=grad(of, wrt))


def sample_probes(rng: np.random.Generator, n: int, dim: int, kind: str = "rademacher") -> np.ndarray:
    """Draw ``n`` probe vectors with zero mean and identity covariance."""
    if kind == "rademacher":
        return rng.integers(0, 2, size=(n, dim)).astype(float) * 2.0 - 1.0
    if kind == "gaussian":
        return rng.standard_normal((n, dim))
    raise ValueError(f"unknown probe kind {kind!r}; expected one of {PROBE_KINDS}")


def cross_jacobian(r: Node, x: Node, z: Node) -> Node:
    """Per-sample matrix d^2 r / dx dz^T, shape (d_x, d_z, *batch).

    Samples are columns of ``x`` (d_x, *batch) and ``z`` (d_z, *batch);
    ``r`` holds one scalar per sample and samples must not interact.  Costs
    d_x extra reverse sweeps.
    """
    g = r.graph
    gx = grad(g.sum(r), x)
    rows = []
    for i in range(x.shape[0]):
        gi = grad(g.sum(gx[i]), z)
        rows.append(g.reshape(gi, (1,) + gi.shape))
    return g.concat(rows, axis=0)


def cross_jacobian_frobenius(r: Node, x: Node, z: Node) -> Node:
    """Per-sample squared Frobenius norm of the cross Jacobian of ``r``."""
    g = r.graph
    cj = cross_jacobian(r, x, z)
    return g.sum(cj * cj, axis=(0, 1))


def hutchinson_cross_norm(
    r_builder: Callable[[Graph, Node, Node], Node],
    x,
    z,
    probes: Sequence[HutchinsonProbe] | np.ndarray,
) -> float:
    """Probe-mean of ||d/dz (eta . d r/dx)||^2 at the point (x, z).

    ``r_builder(g, X, Z)`` receives one column per probe, ``X`` (d_x, n) and
    ``Z`` (d_z, n), and must return one scalar per column.  Unbiased for the
    squared Frobenius norm of the cross Jacobian.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if isinstance(probes, np.ndarray):
        etas = np.atleast_2d(probes.astype(float))
    else:
        probes = list(probes)
        if not probes:
            raise ValueError("at least one probe is required")
        etas = np.stack([np.atleast_1d(np.asarray(p.eta, dtype=float)) for p in probes])
    if etas.shape[0] == 0:
        raise ValueError("at least one probe is required")
    if etas.shape[1] != x.shape[-1]:
        raise ValueError(f"probe dimension {etas.shape[1]} does not match x dimension {x.shape[-1]}")
    n = etas.shape[0]
    g = Graph()
    d_x, d_z = x.shape[-1], z.shape[-1]
    X = g.input("x", (d_x, n))
    Z = g.input("z", (d_z, n))
    eta = g.input("eta", (d_x, n))
    r = r_builder(g, X, Z)
    gx = grad(g.sum(r), X)
    gz = grad(g.sum(eta * gx), Z)
    est = g.mean(g.sum(gz * gz, axis=0))
    feed = {X: np.repeat(x[:, None], n, axis=1), Z: np.repeat(z[:, None], n, axis=1), eta: etas.T}
    return float(g.forward(feed, est))
