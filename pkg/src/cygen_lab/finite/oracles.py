"""Independent checks for the finite theory: an LP feasibility test and the Gibbs kernel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .theory import FiniteCond, JointMatrix, _check_pair

LP_TOL = 1e-9
TV_TOL = 1e-13
MAX_POWER_STEPS = 1_000_000


@dataclass(frozen=True)
class LpResult:
    compatible: bool
    residual: float
    joint: np.ndarray


def lp_compatibility(p: FiniteCond, q: FiniteCond) -> LpResult:
    """Decide compatibility by brute force over joint entries.

    Minimizes t subject to |pi(i,j) - p(i|j) pi_Z(j)| <= t and
    |pi(i,j) - q(j|i) pi_X(i)| <= t over joints pi; the pair is compatible
    iff the optimum is below ``LP_TOL``.
    """
    _check_pair(p, q)
    n_x, n_z = p.table.shape
    n = n_x * n_z
    rows = []
    for i in range(n_x):
        for j in range(n_z):
            r = np.zeros(n)
            r[np.arange(n_x) * n_z + j] -= p.table[i, j]
            r[i * n_z + j] += 1.0
            rows.append(r)
            r = np.zeros(n)
            r[i * n_z + np.arange(n_z)] -= q.table[j, i]
            r[i * n_z + j] += 1.0
            rows.append(r)
    M = np.array(rows)
    ones = np.ones((M.shape[0], 1))
    A_ub = np.block([[M, -ones], [-M, -ones]])
    b_ub = np.zeros(2 * M.shape[0])
    A_eq = np.concatenate([np.ones(n), [0.0]])[None, :]
    c = np.zeros(n + 1)
    c[-1] = 1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=[(0, None)] * (n + 1), method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP failed: {res.message}")
    t = float(res.x[-1])
    return LpResult(compatible=t < LP_TOL, residual=t, joint=res.x[:n].reshape(n_x, n_z))


class OracleNonConvergence(RuntimeError):
    pass


def gibbs_kernel_z(p: FiniteCond, q: FiniteCond) -> np.ndarray:
    """Column-stochastic z-to-z kernel of one sweep: x ~ p(.|z), then z' ~ q(.|x)."""
    return q.table @ p.table


def gibbs_stationary_oracle(
    p: FiniteCond,
    q: FiniteCond,
    init,
    lazy: bool = False,
    tol: float = TV_TOL,
    max_steps: int = MAX_POWER_STEPS,
) -> JointMatrix:
    """Stationary law of the chain state (x_t, z_t), z_t ~ q(.|x_{t-1}), x_t ~ p(.|z_t).

    ``init`` is the distribution of x_0.  Power iteration stops when the
    total-variation change of the z-marginal drops below ``tol``; the joint
    is then nu(z) p(x|z).  Raises :class:`OracleNonConvergence` otherwise,
    typically for a periodic chain; ``lazy`` mixes the kernel with the
    identity, which keeps the stationary law and removes periodicity.
    """
    _check_pair(p, q)
    init = np.asarray(init, dtype=float)
    if init.shape != (p.n_x,) or np.any(init < 0) or abs(init.sum() - 1) > 1e-12:
        raise ValueError("init must be a distribution over x-states")
    K = gibbs_kernel_z(p, q)
    if lazy:
        K = 0.5 * (K + np.eye(K.shape[0]))
    nu = q.table @ init
    for _ in range(max_steps):
        nxt = K @ nu
        change = 0.5 * np.abs(nxt - nu).sum()
        nu = nxt
        if change < tol:
            break
    else:
        raise OracleNonConvergence(f"no convergence in {max_steps} steps")
    joint = p.table * nu[None, :]
    return JointMatrix(joint / joint.sum())


def gibbs_stationary(p: FiniteCond, q: FiniteCond, init, **kw) -> JointMatrix:
    """:func:`gibbs_stationary_oracle`, retried with the lazy kernel on failure."""
    try:
        return gibbs_stationary_oracle(p, q, init, **kw)
    except OracleNonConvergence:
        return gibbs_stationary_oracle(p, q, init, lazy=True, **kw)


def conditional_tv(joint: np.ndarray, q: FiniteCond) -> float:
    """Largest TV distance between the joint's z|x and q(.|x) over x with mass."""
    joint = np.asarray(joint, dtype=float)
    mx = joint.sum(axis=1)
    worst = 0.0
    for i in np.flatnonzero(mx > 0):
        worst = max(worst, 0.5 * np.abs(joint[i] / mx[i] - q.table[:, i]).sum())
    return worst
