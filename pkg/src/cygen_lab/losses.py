"""Training objectives for a decoder p(x|z) and a flow encoder q(z|x).

Every loss takes graph nodes and returns a 0-dimensional node, so parameter
gradients come from one more reverse sweep.  :class:`ObjectiveProgram`
compiles such a loss together with its parameter gradients once and replays
the graph on fresh batches.

Compatibility losses measure the cross derivative of the log ratio
r(x, z) = log p(x|z) - log q(z|x).  For a flow encoder, z-derivatives are
routed through the seed e: for any function phi(e, x),
grad_z phi = (dT/de)^{-T} grad_e phi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy.special import logsumexp

from .autodiff.graph import Graph, Node, grad
from .autodiff.hutchinson import cross_jacobian_frobenius, sample_probes
from .models import FlowConditional, grad_x_logq


@dataclass
class LossBatch:
    """Inputs of one loss evaluation; arrays or graph nodes.

    Samples are columns: ``x`` is (d_x, B).  ``e``: flow seeds (d_z, B) for
    the compatibility term.  ``e_mc``: seeds (d_z, k_mc, B) for the
    likelihood terms.  ``probes``: (d_x, B).  ``z``: explicit latents (d_z,
    B), only used by the formal (non-flow) route.
    """

    x: object
    e: object = None
    e_mc: object = None
    probes: object = None
    z: object = None

    @property
    def k_mc(self) -> int:
        return int(np.shape(self.e_mc)[1])


@dataclass(frozen=True)
class LossWeights:
    w_compat: float = 1e-5
    w_nll: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("w_compat", "w_nll", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


def make_batch(
    rng: np.random.Generator,
    x: np.ndarray,
    d_z: int,
    k_mc: int = 16,
    probe_kind: str = "rademacher",
    n_compat: int | None = None,
) -> LossBatch:
    """Fresh seeds and probes for data ``x`` (d_x, n); independent seeds per term.

    ``n_compat`` limits the compatibility seeds and probes to the first
    columns of ``x``.
    """
    if k_mc < 1:
        raise ValueError("k_mc must be >= 1")
    x = np.asarray(x, dtype=float)
    d_x, n = x.shape
    n_c = n if n_compat is None else min(int(n_compat), n)
    return LossBatch(
        x=x,
        e=rng.standard_normal((d_z, n_c)),
        e_mc=rng.standard_normal((d_z, k_mc, n)),
        probes=sample_probes(rng, n_c, d_x, probe_kind).T.copy(),
    )


def batch_inputs(
    g: Graph, n: int, d_x: int, d_z: int, k_mc: int, with_z: bool = False, n_compat: int | None = None
) -> LossBatch:
    n_c = n if n_compat is None else min(n_compat, n)
    return LossBatch(
        x=g.input("x", (d_x, n)),
        e=g.input("e", (d_z, n_c)),
        e_mc=g.input("e_mc", (d_z, k_mc, n)),
        probes=g.input("probes", (d_x, n_c)),
        z=g.input("z", (d_z, n)) if with_z else None,
    )


# ---------------------------------------------------------------------------
# compatibility


def _ratio_x_gradient(p, q: FlowConditional, pp, qp, x: Node, e: Node):
    """grad_x r at fixed z = T(e|x), plus the flow output (with Jacobian)."""
    g = x.graph
    out = q.forward(qp, e, x, jacobian=True)
    x_formal = g.identity(x)
    logp = p.log_density(pp, x_formal, out.z)
    u_p = grad(g.sum(logp), x_formal)
    u_q = grad_x_logq(q, qp, e, x, out)
    return u_p - u_q, out


def _split(params: Mapping, p, q):
    pp = {k: v for k, v in params.items() if k.startswith(p.prefix)}
    qp = {k: v for k, v in params.items() if k.startswith(q.prefix)}
    return pp, qp


def _formal_cross_norm(p, q, pp, qp, x: Node, z: Node) -> Node:
    r = p.log_density(pp, x, z) - q.log_density(qp, z, x)
    return cross_jacobian_frobenius(r, x, z)


def compat_loss_exact(p, q, params: Mapping, batch: LossBatch) -> Node:
    """Batch mean of the full squared Frobenius norm of grad_x grad_z^T r.

    One reverse sweep per x coordinate.  Flow encoders are evaluated at
    z = T(e|x); other encoders need explicit ``batch.z`` and formal
    densities ``q.log_density(params, z, x)``.
    """
    pp, qp = _split(params, p, q)
    x = batch.x
    g = x.graph
    if not isinstance(q, FlowConditional):
        return g.mean(_formal_cross_norm(p, q, pp, qp, x, batch.z))
    D, out = _ratio_x_gradient(p, q, pp, qp, x, batch.e)
    jt = g.transpose(out.jac)
    total = None
    for i in range(x.shape[0]):
        ge = grad(g.sum(D[i]), batch.e)
        gz = g.solve(jt, ge)
        term = g.sum(gz * gz, axis=0)
        total = term if total is None else total + term
    return g.mean(total)


def compat_loss_hutchinson(p, q: FlowConditional, params: Mapping, batch: LossBatch) -> Node:
    """Batch mean of ||grad_z (eta . grad_x r)||^2 with one probe per row."""
    pp, qp = _split(params, p, q)
    g = batch.x.graph
    D, out = _ratio_x_gradient(p, q, pp, qp, batch.x, batch.e)
    ge = grad(g.dot(batch.probes, D, axis=None), batch.e)
    gz = g.solve(g.transpose(out.jac), ge)
    return g.mean(g.sum(gz * gz, axis=0))


def compat_loss_simplified(p, q: FlowConditional, params: Mapping, batch: LossBatch) -> Node:
    """Hutchinson integrand with the e-gradient in place of the z-gradient.

    No linear solve; vanishes exactly where the Hutchinson integrand does
    because dT/de is invertible.
    """
    pp, qp = _split(params, p, q)
    g = batch.x.graph
    D, _ = _ratio_x_gradient(p, q, pp, qp, batch.x, batch.e)
    ge = grad(g.dot(batch.probes, D, axis=None), batch.e)
    return g.mean(g.sum(ge * ge, axis=0))


# ---------------------------------------------------------------------------
# likelihood-type losses


def _mc_log_p(p, q, params, batch: LossBatch):
    """log p(x|z_k) for z_k = T(e_k|x); shape (k_mc, B)."""
    pp, qp = _split(params, p, q)
    x = batch.x
    g = x.graph
    out = q.forward(qp, batch.e_mc, x)
    x_rep = g.reshape(x, (x.shape[0], 1) + x.shape[1:])
    return p.log_density(pp, x_rep, out.z), out


def nll_loss(p, q, params: Mapping, batch: LossBatch) -> Node:
    """Mean over x of log mean_k 1/p(x|z_k), the estimate of -log p(x)."""
    g = batch.x.graph
    logp, _ = _mc_log_p(p, q, params, batch)
    return g.mean(g.logsumexp(-logp, axis=0)) - math.log(batch.k_mc)


def dae_loss(p, q, params: Mapping, batch: LossBatch) -> Node:
    g = batch.x.graph
    logp, _ = _mc_log_p(p, q, params, batch)
    return -g.mean(logp)


def elbo_loss(p, q, params: Mapping, batch: LossBatch, beta: float = 1.0) -> Node:
    """Negative beta-ELBO with a standard normal prior on z."""
    g = batch.x.graph
    logp, out = _mc_log_p(p, q, params, batch)
    loss = -g.mean(logp)
    if beta:
        d_z = out.z.shape[0]
        log_prior = g.sum(out.z * out.z, axis=0) * -0.5 - 0.5 * d_z * math.log(2.0 * math.pi)
        loss = loss + g.mean(out.log_q - log_prior) * beta
    return loss


def cygen_objective(p, q, params: Mapping, batch: LossBatch, weights: LossWeights) -> Node:
    return _cygen_terms(p, q, params, batch, weights)["total"]


def _cygen_terms(p, q, params, batch, weights: LossWeights) -> dict[str, Node]:
    g = batch.x.graph
    cb = batch
    n_c = batch.e.shape[-1]
    if n_c < batch.x.shape[-1]:
        # compat term on the leading sub-batch; its seeds and probes are sized to match
        cb = LossBatch(x=g.index(batch.x, (slice(None), slice(0, n_c))), e=batch.e, probes=batch.probes)
    compat = compat_loss_simplified(p, q, params, cb)
    nll = nll_loss(p, q, params, batch)
    total = compat * weights.w_compat + nll * weights.w_nll
    return {"total": total, "compat": compat, "nll": nll}


# ---------------------------------------------------------------------------
# compiled objectives

OBJECTIVES = ("cygen", "dae", "elbo")


class ObjectiveProgram:
    """A loss plus its parameter gradients, compiled once for fixed shapes.

    ``kind`` is one of :data:`OBJECTIVES`.  :meth:`run` returns the logged
    scalar terms and a gradient dict keyed by parameter name.  The compat
    and nll terms are reported for the cygen kind.  ``n_compat`` evaluates
    the compatibility term on a leading sub-batch; ``dtype`` is the working
    precision of the replay.  Without ``with_grads`` only the terms are
    computed and the gradient dict is empty.
    """

    def __init__(
        self,
        p,
        q,
        kind: str,
        n: int,
        k_mc: int,
        weights: LossWeights | None = None,
        n_compat: int | None = None,
        dtype=np.float64,
        with_grads: bool = True,
    ):
        if kind not in OBJECTIVES:
            raise ValueError(f"unknown objective {kind!r}")
        self.p, self.q, self.kind = p, q, kind
        self.weights = weights or LossWeights()
        self.dtype = np.dtype(dtype)
        self.n_compat = n if n_compat is None else min(n_compat, n)
        g = Graph()
        self.graph = g
        self.names = sorted({**p.param_shapes(), **q.param_shapes()})
        shapes = {**p.param_shapes(), **q.param_shapes()}
        self.params = {k: g.input(k, shapes[k]) for k in self.names}
        self.batch = batch_inputs(g, n, p.d_x, q.d_z, k_mc, n_compat=self.n_compat)
        if kind == "cygen":
            terms = _cygen_terms(p, q, self.params, self.batch, self.weights)
        else:
            loss = dae_loss(p, q, self.params, self.batch) if kind == "dae" else elbo_loss(
                p, q, self.params, self.batch, self.weights.beta
            )
            terms = {"total": loss}
        self.terms = terms
        self.grads = grad(terms["total"], [self.params[k] for k in self.names]) if with_grads else []
        self._outputs = [terms[k] for k in sorted(terms)] + list(self.grads)
        self._term_names = sorted(terms)

    def feed(self, params: Mapping, batch: LossBatch) -> dict:
        f = {self.params[k]: params[k] for k in self.names}
        f.update({self.batch.x: batch.x, self.batch.e: batch.e, self.batch.e_mc: batch.e_mc, self.batch.probes: batch.probes})
        return f

    def run(self, params: Mapping, batch: LossBatch) -> tuple[dict[str, float], dict[str, np.ndarray]]:
        vals = self.graph.forward(self.feed(params, batch), self._outputs, dtype=self.dtype)
        k = len(self._term_names)
        terms = {name: float(v) for name, v in zip(self._term_names, vals[:k])}
        grads = {name: np.asarray(v, dtype=np.float64) for name, v in zip(self.names, vals[k:])}
        return terms, grads


def evaluate(loss_fn: Callable, p, q, params: Mapping, batch: LossBatch, **kwargs) -> float:
    """Build a one-off graph for ``loss_fn`` and evaluate it on numpy inputs."""
    g = Graph()
    shapes = {**p.param_shapes(), **q.param_shapes()}
    pin = {k: g.input(k, np.shape(params[k])) for k in shapes}
    nodes = {}
    feed = {pin[k]: params[k] for k in shapes}
    for name in ("x", "e", "e_mc", "probes", "z"):
        v = getattr(batch, name)
        if v is not None:
            nodes[name] = g.input(name, np.shape(v))
            feed[nodes[name]] = v
    gb = LossBatch(**{k: nodes.get(k) for k in ("x", "e", "e_mc", "probes", "z")})
    return float(g.forward(feed, loss_fn(p, q, pin, gb, **kwargs)))


def nll_estimate(p, q, params: Mapping, x, rng: np.random.Generator, k_mc: int = 1024, chunk: int = 250) -> np.ndarray:
    """Per-point estimate of -log p(x) with ``k_mc`` samples, evaluated eagerly in chunks."""
    x = np.asarray(x, dtype=float)
    out = []
    for s in range(0, x.shape[1], chunk):
        xc = x[:, s : s + chunk]
        e = rng.standard_normal((q.d_z, k_mc, xc.shape[1]))
        z = q.forward(params, e, xc).z
        logp = p.log_density(params, xc[:, None, :], z)
        out.append(logsumexp(-logp, axis=0) - math.log(k_mc))
    return np.concatenate(out)
