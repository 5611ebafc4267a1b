"""Shared fixtures: small models with closed-form answers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cygen_lab.autodiff import Graph, grad
from cygen_lab.losses import LossBatch, compat_loss_exact
from cygen_lab.models import BernoulliConditional, FlowConditional, GaussianConditional


def inv_softplus(y):
    return np.log(np.expm1(y))


@dataclass
class AffinePair:
    """z ~ N(0, I), x|z ~ N(W z + c, s2 I) with W = U diag(d).

    The exact posterior is a diagonal Gaussian with an affine mean, so an
    identity flow with affine heads represents it exactly.
    """

    p: GaussianConditional
    q: FlowConditional
    params: dict
    W: np.ndarray
    c: np.ndarray
    s2: float
    post_var: np.ndarray

    @property
    def marginal_cov(self) -> np.ndarray:
        return self.W @ self.W.T + self.s2 * np.eye(len(self.c))

    def marginal_logpdf(self, x) -> np.ndarray:
        """log N(x; c, W W^T + s2 I) per column."""
        x = np.asarray(x, dtype=float)
        S = self.marginal_cov
        d = x - self.c[:, None]
        sol = np.linalg.solve(S, d)
        _, logdet = np.linalg.slogdet(S)
        return -0.5 * np.sum(d * sol, axis=0) - 0.5 * logdet - 0.5 * len(self.c) * np.log(2 * np.pi)

    @property
    def prior_cov(self) -> np.ndarray:
        return np.eye(self.W.shape[1])


def affine_pair(seed: int = 0, s2: float = 0.25, dims=(1.5, 0.7), angle: float = 0.6) -> AffinePair:
    d_x = d_z = len(dims)
    rng = np.random.default_rng(seed)
    if d_x == 2:
        U = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    else:
        U = np.linalg.qr(rng.standard_normal((d_x, d_x)))[0]
    W = U @ np.diag(dims)
    c = rng.normal(size=d_x) * 0.5
    p = GaussianConditional(d_x=d_x, d_z=d_z, hidden=(), sigma2=s2)
    q = FlowConditional(d_x=d_x, d_z=d_z, hidden=(), n_flows=0)
    post_var = 1.0 / (1.0 + np.asarray(dims) ** 2 / s2)
    We = np.diag(post_var) @ W.T / s2
    params = {
        "dec.W0": W,
        "dec.b0": c,
        "enc.mu.W": We,
        "enc.mu.b": -We @ c,
        "enc.sig.W": np.zeros((d_z, d_x)),
        "enc.sig.b": inv_softplus(np.sqrt(post_var)),
    }
    return AffinePair(p, q, params, W, c, s2, post_var)


def small_flow(seed: int, n_flows: int = 2, d_x: int = 2, d_z: int = 2, hidden=(8,), scale: float = 1.0):
    """Random flow encoder and decoder with parameters scaled by ``scale``."""
    rng = np.random.default_rng(seed)
    p = GaussianConditional(d_x=d_x, d_z=d_z, hidden=(8,), sigma2=0.1)
    q = FlowConditional(d_x=d_x, d_z=d_z, hidden=hidden, n_flows=n_flows, n_householder=min(2, d_z))
    params = {**p.init_params(rng), **q.init_params(rng)}
    params = {k: v * scale for k, v in params.items()}
    return p, q, params


def flow_identity_grads(q, params, e, x):
    """Formal z- and x-gradients of log q at z = T(e|x), via the library identities."""
    from cygen_lab.autodiff import Graph
    from cygen_lab.models import grad_x_logq, grad_z_logq

    g = Graph()
    E = g.input("e", e.shape)
    X = g.input("x", x.shape)
    out = q.forward(params, E, X, jacobian=True)
    gz = grad_z_logq(q, params, E, X, out)
    gx = grad_x_logq(q, params, E, X, out)
    return g.forward({E: e, X: x}, [out.z, gz, gx])


def root_inverse(q, params, z, x, e0=None):
    """Seed e with T(e|x) = z for one point, by scipy's hybrid root finder.

    Independent of the library's layerwise Newton inverse.
    """
    from scipy.optimize import root

    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    e0 = np.zeros_like(z) if e0 is None else e0

    def res(e):
        return q.forward(params, e[:, None], x[:, None]).z[:, 0] - z

    sol = root(res, e0, method="hybr", tol=1e-13)
    if np.max(np.abs(res(sol.x))) > 1e-11:
        raise RuntimeError("root inverse failed")
    return sol.x


def fd_logq_grads(q, params, z, x, e_hint, h=1e-5):
    """Central differences of log q(z|x) = h(T^{-1}(z|x), x) in z and in x."""

    def logq(zv, xv):
        e = root_inverse(q, params, zv, xv, e_hint)
        return float(q.log_density(params, e[:, None], xv[:, None])[0])

    gz = np.array([(logq(z + h * u, x) - logq(z - h * u, x)) / (2 * h) for u in np.eye(len(z))])
    gx = np.array([(logq(z, x + h * u) - logq(z, x - h * u)) / (2 * h) for u in np.eye(len(x))])
    return gz, gx


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8))


def bernoulli_pair(seed):
    rng = np.random.default_rng(seed)
    p = BernoulliConditional(d_in=2, d_out=3, prefix="dec.")
    q = BernoulliConditional(d_in=3, d_out=2, prefix="enc.")
    params = {**p.init_params(rng), **q.init_params(rng)}
    return p, q, params, rng


def affine_compat_descent(seed, n_steps=400, lr=None):
    """Plain gradient descent on the exact compatibility loss over the affine decoder and encoder weights."""
    pair = affine_pair(seed)
    rng = np.random.default_rng(seed + 1000)
    params = dict(pair.params)
    params["dec.W0"] = rng.normal(size=(2, 2))
    params["enc.mu.W"] = rng.normal(size=(2, 2))
    g = Graph()
    pin = {k: g.input(k, v.shape) for k, v in params.items()}
    X, E = g.input("x", (2, 8)), g.input("e", (2, 8))
    loss = compat_loss_exact(pair.p, pair.q, pin, LossBatch(x=X, e=E))
    names = ["dec.W0", "enc.mu.W"]
    gr = grad(loss, [pin[k] for k in names])
    a, b = 1.0 / pair.s2, 1.0 / pair.post_var
    step = lr or 1.0 / (2.0 * (a * a + np.max(b) ** 2))
    val = None
    for _ in range(n_steps):
        feed = {pin[k]: v for k, v in params.items()}
        feed[X], feed[E] = rng.normal(size=(2, 8)), rng.normal(size=(2, 8))
        val, *gs = g.forward(feed, [loss] + gr)
        if val < 1e-20:
            break
        for k, gk in zip(names, gs):
            params[k] = params[k] - step * gk
    return pair, params, float(val)
