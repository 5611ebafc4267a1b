"""Random finite pairs with known structure, for tests and the CLI demo."""

from __future__ import annotations

import numpy as np

from .theory import FiniteCond

JOINT_KINDS = ("full", "rect", "block", "sparse")


def random_joint(rng: np.random.Generator, n_x: int, n_z: int, kind: str = "full") -> np.ndarray:
    """Random joint table with a support of the given ``kind``.

    ``full``: every cell positive.  ``rect``: a random sub-rectangle.
    ``block``: two disjoint rectangles.  ``sparse``: random cells, at least
    one per chosen row.
    """
    if kind == "full":
        mask = np.ones((n_x, n_z), dtype=bool)
    elif kind == "rect":
        mask = np.zeros((n_x, n_z), dtype=bool)
        rows = rng.choice(n_x, size=rng.integers(1, n_x + 1), replace=False)
        cols = rng.choice(n_z, size=rng.integers(1, n_z + 1), replace=False)
        mask[np.ix_(rows, cols)] = True
    elif kind == "block":
        if min(n_x, n_z) < 2:
            return random_joint(rng, n_x, n_z, "full")
        mask = np.zeros((n_x, n_z), dtype=bool)
        rp, cp = rng.permutation(n_x), rng.permutation(n_z)
        kx, kz = rng.integers(1, n_x), rng.integers(1, n_z)
        mask[np.ix_(rp[:kx], cp[:kz])] = True
        mask[np.ix_(rp[kx:], cp[kz:])] = True
    elif kind == "sparse":
        mask = rng.random((n_x, n_z)) < 0.5
        mask[np.arange(n_x), rng.integers(0, n_z, n_x)] = True
    else:
        raise ValueError(f"unknown joint kind {kind!r}")
    t = np.where(mask, rng.uniform(0.05, 1.0, (n_x, n_z)), 0.0)
    return t / t.sum()


def conditionals(joint: np.ndarray, rng: np.random.Generator | None = None) -> tuple[FiniteCond, FiniteCond]:
    """(p(x|z), q(z|x)) of a joint.

    Columns (rows) with zero marginal get an arbitrary distribution when
    ``rng`` is given, else stay zero; neither choice affects compatibility.
    """
    joint = np.asarray(joint, dtype=float)
    p = joint.copy()
    q = joint.T.copy()
    for t in (p, q):
        for j in np.flatnonzero(t.sum(axis=0) == 0):
            if rng is not None:
                t[:, j] = rng.dirichlet(np.ones(t.shape[0]))
    return FiniteCond.normalized(p), FiniteCond.normalized(q)


def perturb(c: FiniteCond, rng: np.random.Generator, size: float = 0.1) -> FiniteCond:
    """Add ``size`` to one random cell of a nonzero column and renormalize."""
    t = c.table.copy()
    cols = np.flatnonzero(t.sum(axis=0) > 0)
    j = int(rng.choice(cols))
    i = int(rng.integers(t.shape[0]))
    t[i, j] += size
    return FiniteCond.normalized(t)


def random_pair(rng: np.random.Generator, max_size: int = 8, compatible: bool = True):
    """A random (p, q, source_joint) with sizes 2..max_size per axis.

    Incompatible candidates are compatible pairs with one perturbed
    conditional; the caller must still decide compatibility independently.
    """
    n_x, n_z = (int(v) for v in rng.integers(2, max_size + 1, 2))
    kind = JOINT_KINDS[int(rng.integers(len(JOINT_KINDS)))]
    joint = random_joint(rng, n_x, n_z, kind)
    p, q = conditionals(joint, rng)
    if not compatible:
        if rng.random() < 0.5:
            p = perturb(p, rng)
        else:
            q = perturb(q, rng)
    return p, q, joint


def quadrant_pair(n: int = 4) -> tuple[FiniteCond, FiniteCond]:
    """Discretized quadrant pattern with uniform conditionals per slice.

    Grid indices: x rows from bottom (0) to top (n-1), z columns from left to
    right.  For z in the left half p(.|z) covers all x; for z in the right
    half only the top half.  For x in the top half q(.|x) covers the right
    half; for x in the bottom half all z.  The single complete support is
    the top-right quadrant.
    """
    if n % 2:
        raise ValueError("n must be even")
    h = n // 2
    P = np.zeros((n, n))
    P[:, :h] = 1.0
    P[h:, h:] = 1.0
    Qxz = np.zeros((n, n))
    Qxz[h:, h:] = 1.0
    Qxz[:h, :] = 1.0
    return FiniteCond.normalized(P), FiniteCond.normalized(Qxz.T)
