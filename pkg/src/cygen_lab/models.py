"""Parameterized conditional densities.

* :class:`GaussianConditional` -- additive isotropic Gaussian p(x|z) with an
  MLP mean.
* :class:`FlowConditional` -- q(z|x) as an amortized Householder-Sylvester
  flow: a C-QNN feature net, a diagonal-Gaussian reparameterization block and
  ``n_flows`` layers ``z <- z + Q R tanh(R~ Q^T z + b)``.
* :class:`BernoulliConditional` -- a one-layer factorized Bernoulli, used as
  a formal-density fixture.

Layout: samples are columns.  A batch of points is an array of shape
``(d, *batch)``; per-sample matrices are ``(m, n, *batch)``.  All model
methods accept numpy arrays (eager evaluation) or graph nodes
(differentiable construction).

The flow inverse has no closed form, so q(z|x) is evaluated at a generated
point z = T(e|x).  :func:`grad_z_logq` and :func:`grad_x_logq` recover the
gradients of log q in its formal z and x arguments from quantities that
reverse-mode differentiation reaches.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from .autodiff.graph import Graph, Node, grad
from .autodiff.numpy_ops import ops_for

LOG_2PI = math.log(2.0 * math.pi)
ACTIVATIONS = ("tanh", "sigmoid", "identity")
_HH_EPS = 1e-30


class NonInvertibleFlowError(ValueError):
    pass


def _activate(F, name, h):
    if name == "tanh":
        return F.tanh(h)
    if name == "sigmoid":
        return F.sigmoid(h)
    if name == "identity":
        return h
    raise ValueError(f"unknown activation {name!r}")


def _column(F, v, batch_rank: int):
    """Reshape a (n,) parameter vector to broadcast against (n, *batch)."""
    n = np.shape(v)[0]
    return F.reshape(v, (n,) + (1,) * batch_rank) if batch_rank else v


def _trail(arr: np.ndarray, batch_rank: int) -> np.ndarray:
    return arr.reshape(arr.shape + (1,) * batch_rank)


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    activations: tuple[str, ...]
    prefix: str = ""

    def __post_init__(self):
        if len(self.activations) != len(self.widths) - 1:
            raise ValueError("need one activation per layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for i, (m, n) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            shapes[f"{self.prefix}W{i}"] = (n, m)
            shapes[f"{self.prefix}b{i}"] = (n,)
        return shapes

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        # uniform(+-1/sqrt(fan_in)) for weights and biases
        out = {}
        for i, (m, n) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            bound = 1.0 / math.sqrt(m)
            out[f"{self.prefix}W{i}"] = rng.uniform(-bound, bound, (n, m))
            out[f"{self.prefix}b{i}"] = rng.uniform(-bound, bound, (n,))
        return out

    def apply(self, params: Mapping, h):
        F = ops_for(h, params[f"{self.prefix}W0"])
        nb = len(np.shape(h)) - 1
        for i, act in enumerate(self.activations):
            pre = F.matvec(params[f"{self.prefix}W{i}"], h) + _column(F, params[f"{self.prefix}b{i}"], nb)
            h = _activate(F, act, pre)
        return h


class ConditionalModel:
    """Shared parameter plumbing."""

    prefix = ""

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        raise NotImplementedError

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def param_inputs(self, g: Graph) -> dict[str, Node]:
        return {name: g.input(name, shape) for name, shape in self.param_shapes().items()}


@dataclass
class GaussianConditional(ConditionalModel):
    """p(x|z) = N(x | f(z), sigma2 I) with an MLP mean f."""

    d_x: int = 2
    d_z: int = 2
    hidden: tuple[int, ...] = (16, 16)
    sigma2: float = 0.01
    activation: str = "tanh"
    prefix: str = "dec."
    mean_net: MlpSpec = field(init=False)

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        widths = (self.d_z, *self.hidden, self.d_x)
        acts = (self.activation,) * len(self.hidden) + ("identity",)
        self.mean_net = MlpSpec(widths, acts, prefix=self.prefix)

    def param_shapes(self):
        return self.mean_net.param_shapes()

    def init_params(self, rng):
        return self.mean_net.init(rng)

    def mean(self, params, z):
        return self.mean_net.apply(params, z)

    def log_density(self, params, x, z):
        """Per-sample log N(x | f(z), sigma2 I)."""
        F = ops_for(x, z, params[self.prefix + "W0"])
        diff = x - self.mean(params, z)
        quad = F.sum(diff * diff, axis=0)
        return quad * (-0.5 / self.sigma2) - 0.5 * self.d_x * (LOG_2PI + math.log(self.sigma2))

    def grad_x_log_density(self, params, x, z):
        """Closed form (f(z) - x) / sigma2."""
        return (self.mean(params, z) - x) * (1.0 / self.sigma2)

    def sample(self, params, z, rng: np.random.Generator):
        f = np.asarray(self.mean(params, np.asarray(z, dtype=float)))
        return f + math.sqrt(self.sigma2) * rng.standard_normal(f.shape)


@dataclass
class BernoulliConditional(ConditionalModel):
    """One-layer factorized Bernoulli conditional of ``out`` given ``inp``.

    log p(out|inp) = out . a - sum softplus(a) with logits a = W inp + c,
    evaluated formally for real-valued ``out`` so both arguments can be
    differentiated.
    """

    d_in: int = 2
    d_out: int = 2
    prefix: str = "bern."

    def param_shapes(self):
        return {self.prefix + "W": (self.d_out, self.d_in), self.prefix + "c": (self.d_out,)}

    def init_params(self, rng):
        return {name: rng.standard_normal(shape) for name, shape in self.param_shapes().items()}

    def logits(self, params, inp):
        F = ops_for(inp, params[self.prefix + "W"])
        nb = len(np.shape(inp)) - 1
        return F.matvec(params[self.prefix + "W"], inp) + _column(F, params[self.prefix + "c"], nb)

    def log_density(self, params, out, inp):
        F = ops_for(out, inp, params[self.prefix + "W"])
        a = self.logits(params, inp)
        return F.sum(out * a - F.softplus(a), axis=0)

    def sample(self, params, inp, rng: np.random.Generator):
        a = np.asarray(self.logits(params, np.asarray(inp, dtype=float)))
        return (rng.random(a.shape) < 1.0 / (1.0 + np.exp(-a))).astype(float)


class FlowOutput(NamedTuple):
    z: object
    log_det: object  # log |det dz/de|, including the reparameterization step
    log_q: object  # h(e, x) = log N(e; 0, I) - log_det
    jac: object | None  # dz/de as (d_z, d_z, *batch) when requested


class Amortized(NamedTuple):
    mu: object
    sigma: object
    layers: list  # per layer (A, Bm, b, diag_product[, Q])


@dataclass
class FlowConditional(ConditionalModel):
    """Amortized Householder-Sylvester flow q(z|x) with z = T(e|x), e ~ N(0, I)."""

    d_x: int = 2
    d_z: int = 2
    hidden: tuple[int, ...] = (8, 8, 8)
    n_flows: int = 32
    n_householder: int = 2
    activation: str = "tanh"
    prefix: str = "enc."
    cqnn: MlpSpec = field(init=False)

    def __post_init__(self):
        if self.n_householder > self.d_z:
            raise ValueError("n_householder must not exceed d_z")
        if self.n_householder < 1 and self.n_flows > 0:
            raise ValueError("need at least one Householder reflection per layer")
        widths = (self.d_x, *self.hidden)
        self.cqnn = MlpSpec(widths, (self.activation,) * len(self.hidden), prefix=self.prefix + "nn.")

    @property
    def n_hidden(self) -> int:
        return self.hidden[-1] if self.hidden else self.d_x

    @property
    def layer_width(self) -> int:
        d = self.d_z
        return d * d + 3 * d + self.n_householder * d

    def param_shapes(self):
        h = self.n_hidden
        p = self.prefix
        shapes = dict(self.cqnn.param_shapes())
        shapes[p + "mu.W"] = (self.d_z, h)
        shapes[p + "mu.b"] = (self.d_z,)
        shapes[p + "sig.W"] = (self.d_z, h)
        shapes[p + "sig.b"] = (self.d_z,)
        if self.n_flows:
            # rows ordered (field, layer): row = field * n_flows + layer
            shapes[p + "flow.W"] = (self.layer_width * self.n_flows, h)
            shapes[p + "flow.b"] = (self.layer_width * self.n_flows,)
        return shapes

    def init_params(self, rng):
        params = self.cqnn.init(rng)
        bound = 1.0 / math.sqrt(self.n_hidden)
        for name, shape in self.param_shapes().items():
            if name not in params:
                params[name] = rng.uniform(-bound, bound, shape)
        return params

    # -- amortized heads -----------------------------------------------------
    def amortize(self, params, x, with_q: bool = False) -> Amortized:
        """Reparameterization and per-layer flow parameters at ``x``.

        All layers are built at once on a (..., n_flows, *batch) stack and
        then split.  With ``with_q`` each layer tuple also carries its
        Householder product Q.
        """
        p = self.prefix
        F = ops_for(x, params[p + "mu.W"])
        nb = len(np.shape(x)) - 1
        feat = self.cqnn.apply(params, x) if self.hidden else x
        mu = F.matvec(params[p + "mu.W"], feat) + _column(F, params[p + "mu.b"], nb)
        sigma = F.softplus(F.matvec(params[p + "sig.W"], feat) + _column(F, params[p + "sig.b"], nb))
        if not self.n_flows:
            return Amortized(mu, sigma, [])
        d, N = self.d_z, self.n_flows
        stack = (N,) + tuple(np.shape(x)[1:])
        eye = _trail(np.eye(d), nb + 1)
        upper = _trail(np.triu(np.ones((d, d)), 1), nb + 1)
        raw = F.matvec(params[p + "flow.W"], feat) + _column(F, params[p + "flow.b"], nb)
        raw = F.reshape(raw, (self.layer_width,) + stack)
        cuts = np.cumsum([0, d * d, d, d, d] + [d] * self.n_householder)
        piece = [F.index(raw, (slice(int(a), int(b)),)) for a, b in zip(cuts[:-1], cuts[1:])]
        full = F.reshape(piece[0], (d, d) + stack)
        d1, d2 = F.tanh(piece[1]), F.tanh(piece[2])
        b = piece[3]
        R = full * upper + eye * F.reshape(d1, (1, d) + stack)
        Rt = F.transpose(full) * upper + eye * F.reshape(d2, (1, d) + stack)
        Q = None
        for v in piece[4:]:
            vv = F.reshape(F.sum(v * v, axis=0), (1, 1) + stack) + _HH_EPS
            refl = eye - F.outer(v, v) * (2.0 / vv)
            Q = refl if Q is None else F.matmul(Q, refl)
        A = F.matmul(Q, R)
        Bm = F.matmul(Rt, F.transpose(Q))
        rr = d1 * d2
        layers = []
        for t in range(N):
            m_key = (slice(None), slice(None), t)
            v_key = (slice(None), t)
            layer = (F.index(A, m_key), F.index(Bm, m_key), F.index(b, v_key), F.index(rr, v_key))
            layers.append(layer + (F.index(Q, m_key),) if with_q else layer)
        return Amortized(mu, sigma, layers)

    def householder_products(self, params, x) -> list[np.ndarray]:
        """Numeric Q matrix of every layer at the points ``x``."""
        amort = self.amortize(params, np.asarray(x, dtype=float), with_q=True)
        return [layer[4] for layer in amort.layers]

    @staticmethod
    def _expand(F, amort: Amortized, extra: int) -> Amortized:
        """Insert ``extra`` singleton batch axes in front of the batch of ``x``."""
        if extra <= 0:
            return amort

        def grow(a, feat):
            shape = tuple(np.shape(a))
            return F.reshape(a, shape[:feat] + (1,) * extra + shape[feat:])

        layers = [(grow(A, 2), grow(Bm, 2), grow(b, 1), grow(rr, 1)) for A, Bm, b, rr, *_ in amort.layers]
        return Amortized(grow(amort.mu, 1), grow(amort.sigma, 1), layers)

    # -- forward flow ----------------------------------------------------------
    def forward(self, params, e, x, jacobian: bool = False, amort: Amortized | None = None) -> FlowOutput:
        """Push seeds ``e`` through T(.|x).

        ``e`` may carry extra leading batch axes, e.g. (d_z, K, B) seeds for
        (d_x, B) points.
        """
        F = ops_for(e, x, params[self.prefix + "mu.W"])
        if amort is None:
            amort = self.amortize(params, x)
        amort = self._expand(F, amort, len(np.shape(e)) - len(np.shape(x)))
        mu, sigma = amort.mu, amort.sigma
        d = self.d_z
        z = mu + e * sigma
        log_det = F.sum(F.log(sigma), axis=0)
        jac = None
        if jacobian:
            batch = tuple(np.shape(sigma)[1:])
            jac = _trail(np.eye(d), len(batch)) * F.reshape(sigma, (1, d) + batch)
        for A, Bm, b, rr, *_ in amort.layers:
            hh = F.tanh(F.matvec(Bm, z) + b)
            hp = 1.0 - hh * hh
            if jacobian:
                scaled = F.matmul(Bm, jac) * F.reshape(hp, (d, 1) + tuple(np.shape(hp)[1:]))
                jac = jac + F.matmul(A, scaled)
            z = z + F.matvec(A, hh)
            log_det = log_det + F.sum(F.log(1.0 + hp * rr), axis=0)
        log_base = F.sum(e * e, axis=0) * -0.5 - 0.5 * d * LOG_2PI
        return FlowOutput(z, log_det, log_base - log_det, jac)

    def log_density(self, params, e, x):
        return self.forward(params, e, x).log_q

    def sample(self, params, x, rng: np.random.Generator, return_seed: bool = False):
        x = np.asarray(x, dtype=float)
        e = rng.standard_normal((self.d_z,) + x.shape[1:])
        z = self.forward(params, e, x).z
        return (z, e) if return_seed else z

    def code(self, params, x):
        """T(0|x): the flow image of the seed mode, a cheap latent code."""
        x = np.asarray(x, dtype=float)
        return self.forward(params, np.zeros((self.d_z,) + x.shape[1:]), x).z

    # -- numeric inverse ---------------------------------------------------------
    def inverse(self, params, z, x, tol: float = 1e-10, max_iter: int = 60) -> np.ndarray:
        """Seeds e with T(e|x) = z, layer by layer with damped Newton steps."""
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        amort = self.amortize(params, x)
        eye = _trail(np.eye(self.d_z), z.ndim - 1)
        w = z
        for A, Bm, b, _ in reversed(amort.layers):

            def residual(u, A=A, Bm=Bm, b=b, w=w):
                hh = np.tanh(np.einsum("ij...,j...->i...", Bm, u) + b)
                return u + np.einsum("ij...,j...->i...", A, hh) - w, hh

            u = w.copy()
            res, hh = residual(u)
            for _ in range(max_iter):
                err = np.max(np.abs(res)) if res.size else 0.0
                if err < tol:
                    break
                hp = 1.0 - hh * hh
                J = eye + np.einsum("ij...,jk...->ik...", A, Bm * hp[:, None])
                Jm = np.moveaxis(J, (0, 1), (-2, -1))
                step = np.moveaxis(np.linalg.solve(Jm, np.moveaxis(res, 0, -1)[..., None])[..., 0], -1, 0)
                lam = 1.0
                while True:
                    cand = u - lam * step
                    cres, chh = residual(cand)
                    if np.max(np.abs(cres)) < err or lam < 1e-4:
                        break
                    lam *= 0.5
                u, res, hh = cand, cres, chh
            else:
                if np.max(np.abs(res)) > 1e3 * tol:
                    raise NonInvertibleFlowError("layer inverse did not converge")
            w = u
        return (w - amort.mu) / amort.sigma


# ---------------------------------------------------------------------------
# operation-level API


def gauss_log_density(p: GaussianConditional, params, x, z):
    return p.log_density(params, x, z)


def flow_forward(q: FlowConditional, params, e, x):
    out = q.forward(params, e, x)
    return out.z, out.log_det


def flow_log_density(q: FlowConditional, params, e, x):
    return q.log_density(params, e, x)


def grad_z_logq(q: FlowConditional, params, e: Node, x: Node, out: FlowOutput | None = None) -> Node:
    """Gradient of log q in its formal z argument at z = T(e|x).

    Solves (dT/de)^T g = dh/de with the closed-form flow Jacobian.
    """
    if out is None or out.jac is None:
        out = q.forward(params, e, x, jacobian=True)
    g = e.graph
    gh_e = grad(g.sum(out.log_q), e)
    return g.solve(g.transpose(out.jac), gh_e)


def grad_x_logq(q: FlowConditional, params, e: Node, x: Node, out: FlowOutput | None = None) -> Node:
    """Gradient of log q in its formal x argument at z = T(e|x).

    dh/dx minus the vector-Jacobian product of T(e|.) with the formal z
    gradient; the product costs one reverse sweep through the forward flow.
    """
    if out is None or out.jac is None:
        out = q.forward(params, e, x, jacobian=True)
    g = e.graph
    gz = grad_z_logq(q, params, e, x, out)
    gh_x = grad(g.sum(out.log_q), x)
    vjp = grad(out.z, x, seed=gz)
    return gh_x - vjp


# ---------------------------------------------------------------------------
# checkpoints


def save_params(path, params: Mapping[str, np.ndarray]) -> None:
    """Flat JSON of named parameter arrays with shapes, keys sorted."""
    doc = {
        name: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=float).ravel().tolist()}
        for name, v in sorted(params.items())
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_params(path) -> dict[str, np.ndarray]:
    doc = json.loads(Path(path).read_text())
    return {name: np.asarray(item["data"], dtype=float).reshape(item["shape"]) for name, item in doc.items()}
