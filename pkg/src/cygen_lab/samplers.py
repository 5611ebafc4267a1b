"""Generation from a pair of conditionals: Langevin dynamics, Gibbs chains, ancestral draws.

Chains run in parallel as columns: a state is (d, n_chains).
"""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff.graph import Graph, grad
from .finite.theory import FiniteCond
from .losses import _ratio_x_gradient
from .models import FlowConditional, GaussianConditional, grad_z_logq

DIVERGENCE_NORM = 1e6


class SamplerDivergenceError(RuntimeError):
    """A chain left the ball of radius ``DIVERGENCE_NORM``."""

    def __init__(self, step: int, max_norm: float, n_bad: int):
        super().__init__(f"divergence at step {step}: {n_bad} chains with |state| up to {max_norm:.3g}")
        self.step, self.max_norm, self.n_bad = step, max_norm, n_bad


@dataclass(frozen=True)
class SgldConfig:
    eps: float = 3e-4
    n_steps: int = 100
    noise_scale: float = 1.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.noise_scale >= 0:
            raise ValueError("noise_scale must be nonnegative")


@dataclass
class ChainState:
    x: np.ndarray
    z: np.ndarray | None
    step: int
    rng: np.random.Generator


@dataclass
class Trajectory:
    """``states`` is (n_steps + 1, d, n_chains); ``partners`` holds the
    resampled other variable used at each step (same length)."""

    states: np.ndarray
    partners: np.ndarray | None = None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def langevin(
    grad_log_density: Callable[[np.ndarray, np.random.Generator], np.ndarray | tuple],
    x0,
    cfg: SgldConfig,
    rng: np.random.Generator,
) -> Trajectory:
    """Unadjusted Langevin steps x += eps * grad + noise_scale * sqrt(2 eps) * N(0, I).

    ``grad_log_density(x, rng)`` returns the drift, or ``(drift, partner)``
    when it draws an auxiliary variable worth recording.
    """
    x = np.array(x0, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    states = [x.copy()]
    partners = []
    scale = cfg.noise_scale * np.sqrt(2.0 * cfg.eps)
    for t in range(cfg.n_steps):
        out = grad_log_density(x, rng)
        drift, partner = out if isinstance(out, tuple) else (out, None)
        if partner is not None:
            partners.append(partner)
        x = x + cfg.eps * drift + scale * rng.standard_normal(x.shape)
        norms = np.sqrt(np.sum(x * x, axis=0))
        bad = ~(norms <= DIVERGENCE_NORM)
        if np.any(bad):
            worst = float(np.max(np.where(np.isfinite(norms), norms, np.inf)))
            raise SamplerDivergenceError(t + 1, worst, int(bad.sum()))
        states.append(x.copy())
    return Trajectory(np.stack(states), np.stack(partners) if partners else None)


# ---------------------------------------------------------------------------
# model-coupled drifts


class _XDrift:
    """grad_x [log p(x|z) - log q(z|x)] at z = T(e|x), compiled for one chain count."""

    def __init__(self, p: GaussianConditional, q: FlowConditional, n: int):
        g = Graph()
        shapes = {**p.param_shapes(), **q.param_shapes()}
        self.params = {k: g.input(k, s) for k, s in shapes.items()}
        self.x = g.input("x", (p.d_x, n))
        self.e = g.input("e", (q.d_z, n))
        D, out = _ratio_x_gradient(p, q, self.params, self.params, self.x, self.e)
        self.graph, self.outs = g, [D, out.z]

    def __call__(self, params, x, e):
        feed = {self.params[k]: params[k] for k in self.params}
        feed[self.x], feed[self.e] = x, e
        return self.graph.forward(feed, self.outs)


class _ZDrift:
    """grad_z [log q(z|x) - log p(x|z)] for seeds e with T(e|x) = z."""

    def __init__(self, p: GaussianConditional, q: FlowConditional, n: int):
        g = Graph()
        shapes = {**p.param_shapes(), **q.param_shapes()}
        self.params = {k: g.input(k, s) for k, s in shapes.items()}
        self.x = g.input("x", (p.d_x, n))
        self.z = g.input("z", (q.d_z, n))
        self.e = g.input("e", (q.d_z, n))
        gq = grad_z_logq(q, self.params, self.e, self.x)
        gp = grad(g.sum(p.log_density(self.params, self.x, self.z)), self.z)
        self.graph, self.out = g, gq - gp

    def __call__(self, params, x, z, e):
        feed = {self.params[k]: params[k] for k in self.params}
        feed[self.x], feed[self.z], feed[self.e] = x, z, e
        return self.graph.forward(feed, self.out)


def unnorm_logdensity_x(p: GaussianConditional, q: FlowConditional, params, x, rng: np.random.Generator):
    """log p(x|z) - log q(z|x) with one z ~ q(.|x) per column of ``x``.

    When the pair is compatible this is log p(x) up to a constant.
    """
    x = np.asarray(x, dtype=float)
    e = rng.standard_normal((q.d_z,) + x.shape[1:])
    out = q.forward(params, e, x)
    return p.log_density(params, x, out.z) - out.log_q


def sgld_x(p, q, params, x0, cfg: SgldConfig, rng: np.random.Generator) -> Trajectory:
    """Langevin chains in data space, resampling z ~ q(.|x) at every step."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    drift = _XDrift(p, q, x0.shape[1])

    def step(x, rng):
        e = rng.standard_normal((q.d_z, x.shape[1]))
        D, z = drift(params, x, e)
        return D, z

    return langevin(step, x0, cfg, rng)


def sgld_z(p, q, params, z0, cfg: SgldConfig, rng: np.random.Generator) -> Trajectory:
    """Langevin chains in latent space, resampling x ~ p(.|z) at every step.

    The formal z-gradient of log q needs the seed e with T(e|x) = z, found
    by the flow's numeric inverse.
    """
    z0 = np.atleast_2d(np.asarray(z0, dtype=float))
    drift = _ZDrift(p, q, z0.shape[1])

    def step(z, rng):
        x = p.sample(params, z, rng)
        e = q.inverse(params, z, x)
        return drift(params, x, z, e), x

    return langevin(step, z0, cfg, rng)


def ancestral(p: GaussianConditional, params, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """z ~ N(0, I), x ~ p(.|z); returns (x, z) as columns."""
    z = rng.standard_normal((p.d_z, n))
    return p.sample(params, z, rng), z


# ---------------------------------------------------------------------------
# Gibbs chains


def gibbs_chain(p, q, x0, n_steps: int, rng: np.random.Generator, params=None):
    """Alternate z_t ~ q(.|x_{t-1}) and x_t ~ p(.|z_t) for t = 1..n_steps.

    With :class:`FiniteCond` conditionals ``x0`` is a state index and the
    result is a pair of integer arrays (xs, zs).  With models, ``x0`` is
    (d_x, n_chains) and the result is (xs, zs) of shape (n_steps, d, n).
    """
    if isinstance(p, FiniteCond):
        return _finite_gibbs(p, q, int(x0), n_steps, rng)
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    xs, zs = [], []
    for _ in range(n_steps):
        z = q.sample(params, x, rng)
        x = p.sample(params, z, rng)
        xs.append(x)
        zs.append(z)
    return np.stack(xs), np.stack(zs)


def _finite_gibbs(p: FiniteCond, q: FiniteCond, x0: int, n_steps: int, rng):
    # q.table[:, i] is q(.|x=i); p.table[:, j] is p(.|z=j)
    cq = [np.cumsum(q.table[:, i]).tolist() for i in range(q.n_z)]
    cp = [np.cumsum(p.table[:, j]).tolist() for j in range(p.n_z)]
    u = rng.random((n_steps, 2)).tolist()
    xs = np.empty(n_steps, dtype=np.int64)
    zs = np.empty(n_steps, dtype=np.int64)
    x = x0
    nz, nx = q.n_x - 1, p.n_x - 1
    for t in range(n_steps):
        uz, ux = u[t]
        col = cq[x]
        z = min(bisect.bisect_right(col, uz * col[-1]), nz)
        col = cp[z]
        x = min(bisect.bisect_right(col, ux * col[-1]), nx)
        xs[t] = x
        zs[t] = z
    return xs, zs


def occupancy(xs, zs, n_x: int, n_z: int) -> np.ndarray:
    """Empirical joint of a finite chain."""
    counts = np.zeros((n_x, n_z))
    np.add.at(counts, (xs, zs), 1.0)
    return counts / counts.sum()


def write_trajectory_csv(path, states: np.ndarray, partners: np.ndarray | None = None, names=("x", "z")) -> None:
    """One row per (step, chain): step, chain, state coordinates, partner coordinates.

    The partner in row t is the draw used to move from state t.
    """
    states = np.asarray(states)
    T, d, n = states.shape
    header = ["step", "chain"] + [f"{names[0]}{i}" for i in range(d)]
    if partners is not None:
        partners = np.asarray(partners)
        header += [f"{names[1]}{i}" for i in range(partners.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(T):
            for c in range(n):
                row = [t, c] + [repr(float(v)) for v in states[t, :, c]]
                if partners is not None:
                    # the final state has no partner draw
                    row += [repr(float(v)) for v in partners[t, :, c]] if t < len(partners) else [""] * partners.shape[1]
                w.writerow(row)
