"""Compatibility and determinacy of two conditionals on finite spaces.

Base measures are counting measures, so every almost-everywhere statement
becomes an exact set statement.  Matrices are indexed (x, z) unless noted:
``p`` holds p(x|z) as an n_x by n_z table; ``q`` holds q(z|x) in the
transposed orientation, n_z by n_x, so that both are column-stochastic.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

COLUMN_TOL = 1e-12
FACTOR_TOL = 1e-9
MAX_COMPONENTS = 16


@dataclass(frozen=True)
class FiniteCond:
    """Column-stochastic table; entry (i, j) is the probability of row state i given column state j.

    A column may also be identically zero.
    """

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 2 or 0 in t.shape:
            raise ValueError(f"table must be a nonempty matrix, got shape {t.shape}")
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise ValueError("table entries must be finite and nonnegative")
        sums = t.sum(axis=0)
        bad = ~((np.abs(sums - 1.0) <= COLUMN_TOL) | (sums == 0.0))
        if np.any(bad):
            j = int(np.flatnonzero(bad)[0])
            raise ValueError(f"column {j} sums to {sums[j]!r}; expected 1 or 0")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def n_x(self) -> int:
        return self.table.shape[0]

    @property
    def n_z(self) -> int:
        return self.table.shape[1]

    @classmethod
    def normalized(cls, table) -> "FiniteCond":
        """Rescale each nonzero column of a nonnegative matrix to sum 1."""
        t = np.asarray(table, dtype=float)
        s = t.sum(axis=0, keepdims=True)
        return cls(np.divide(t, s, out=np.zeros_like(t), where=s > 0))


@dataclass(frozen=True)
class SupportSet:
    """Boolean mask over X x Z with its two projections."""

    mask: np.ndarray
    proj_x: np.ndarray = field(init=False, repr=False, compare=False)
    proj_z: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)
        if m.ndim != 2:
            raise ValueError("mask must be 2-dimensional")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "proj_x", m.any(axis=1))
        object.__setattr__(self, "proj_z", m.any(axis=0))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def __eq__(self, other):
        return isinstance(other, SupportSet) and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash((self.mask.shape, self.mask.tobytes()))

    def __and__(self, other: "SupportSet") -> "SupportSet":
        return SupportSet(self.mask & other.mask)

    def __or__(self, other: "SupportSet") -> "SupportSet":
        return SupportSet(self.mask | other.mask)

    def is_empty(self) -> bool:
        return not self.mask.any()

    def to_strings(self) -> list[str]:
        return ["".join("1" if v else "0" for v in row) for row in self.mask]

    @classmethod
    def from_strings(cls, rows) -> "SupportSet":
        return cls(np.array([[c == "1" for c in r] for r in rows], dtype=bool))


@dataclass(frozen=True)
class FactorizationWitness:
    """p(i|j) / q(j|i) = a[i] b[j] on a support.

    ``a`` and ``b`` are full length; entries outside the projections are 0.
    """

    a: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class JointMatrix:
    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if np.any(t < 0) or abs(t.sum() - 1.0) > COLUMN_TOL:
            raise ValueError("joint must be nonnegative with total mass 1")
        object.__setattr__(self, "table", t)

    @property
    def marginal_x(self) -> np.ndarray:
        return self.table.sum(axis=1)

    @property
    def marginal_z(self) -> np.ndarray:
        return self.table.sum(axis=0)

    def cond_x_given_z(self) -> FiniteCond:
        return FiniteCond.normalized(self.table)

    def cond_z_given_x(self) -> FiniteCond:
        return FiniteCond.normalized(self.table.T)


@dataclass(frozen=True)
class CompatReport:
    compatible: bool
    complete_supports: list[SupportSet]
    joints: list[JointMatrix]
    globally_determinate: bool


def _check_pair(p: FiniteCond, q: FiniteCond) -> None:
    if (p.n_x, p.n_z) != (q.n_z, q.n_x):
        raise ValueError(
            f"dimension mismatch: p is {p.n_x}x{p.n_z} (x|z) but q is {q.n_x}x{q.n_z} (z|x)"
        )


def positive_regions(c: FiniteCond) -> SupportSet:
    """Cells with positive probability, in the table's own orientation."""
    return SupportSet(c.table > 0)


def candidate_sets(p: FiniteCond, q: FiniteCond) -> tuple[SupportSet, SupportSet]:
    """(W_pq, W_qp) over X x Z.

    W_pq keeps the positive slice of p(.|z) for each z whose slice lies
    inside the matching slice of q; W_qp is the mirror image over x.
    """
    _check_pair(p, q)
    P = p.table > 0
    Q = q.table.T > 0
    cols_ok = np.all(~P | Q, axis=0)
    rows_ok = np.all(~Q | P, axis=1)
    return SupportSet(P & cols_ok[None, :]), SupportSet(Q & rows_ok[:, None])


def stretch(s: SupportSet) -> SupportSet:
    return SupportSet(s.proj_x[:, None] | s.proj_z[None, :])


def is_complete_component(s: SupportSet, w: SupportSet) -> bool:
    if s.shape != w.shape:
        raise ValueError("support sets must have the same shape")
    return bool(np.array_equal(stretch(s).mask & w.mask, s.mask))


def check_factorization(p: FiniteCond, q: FiniteCond, s: SupportSet) -> FactorizationWitness | None:
    """Fit log a[i] + log b[j] = log p(i|j) - log q(j|i) on the cells of ``s``.

    Each connected component is solved by breadth-first propagation from
    its lowest row index, pinned to log a = 0; every cell is then checked.
    """
    _check_pair(p, q)
    mask = s.mask
    pt, qt = p.table, q.table.T
    if np.any(pt[mask] <= 0) or np.any(qt[mask] <= 0):
        return None
    n_x, n_z = mask.shape
    with np.errstate(divide="ignore", invalid="ignore"):
        label = np.where(mask, np.log(pt) - np.log(qt), 0.0)
    la = np.full(n_x, np.nan)
    lb = np.full(n_z, np.nan)
    rows = [np.flatnonzero(mask[i]) for i in range(n_x)]
    cols = [np.flatnonzero(mask[:, j]) for j in range(n_z)]
    for root in np.flatnonzero(s.proj_x):
        if not np.isnan(la[root]):
            continue
        la[root] = 0.0
        queue = deque([("x", int(root))])
        while queue:
            side, k = queue.popleft()
            if side == "x":
                for j in rows[k]:
                    if np.isnan(lb[j]):
                        lb[j] = label[k, j] - la[k]
                        queue.append(("z", int(j)))
            else:
                for i in cols[k]:
                    if np.isnan(la[i]):
                        la[i] = label[i, k] - lb[k]
                        queue.append(("x", int(i)))
    ii, jj = np.nonzero(mask)
    resid = la[ii] + lb[jj] - label[ii, jj]
    if np.any(np.abs(np.expm1(resid)) > FACTOR_TOL):
        return None
    a = np.where(s.proj_x, np.exp(np.nan_to_num(la)), 0.0)
    b = np.where(s.proj_z, np.exp(np.nan_to_num(lb)), 0.0)
    return FactorizationWitness(a=a, b=b)


def construct_joint(q: FiniteCond, s: SupportSet, w: FactorizationWitness) -> JointMatrix:
    """pi(i, j) proportional to q(j|i) |a[i]| on ``s``.

    Normalized by the total mass, which equals the sum of |a| over the
    x-projection whenever ``s`` is a complete support.
    """
    raw = np.where(s.mask, q.table.T * np.abs(w.a)[:, None], 0.0)
    total = raw.sum()
    if not total > 0:
        raise ValueError("support carries no mass under q and the witness")
    return JointMatrix(raw / total)


def check_determinacy(s: SupportSet) -> bool:
    """True iff the support is a rectangle S^X x S^Z."""
    if s.is_empty():
        return False
    rect = s.proj_x[:, None] & s.proj_z[None, :]
    return bool(np.array_equal(rect, s.mask))


def _components(mask: np.ndarray) -> list[np.ndarray]:
    """Cell masks of the connected components of the bipartite row-column graph."""
    n_x, n_z = mask.shape
    ii, jj = np.nonzero(mask)
    if ii.size == 0:
        return []
    adj = csr_matrix((np.ones(ii.size), (ii, n_x + jj)), shape=(n_x + n_z, n_x + n_z))
    _, lab = connected_components(adj, directed=False)
    cell_lab = lab[ii]
    out = []
    for c in np.unique(cell_lab):
        m = np.zeros_like(mask)
        sel = cell_lab == c
        m[ii[sel], jj[sel]] = True
        out.append(m)
    return out


def _satisfies_conditions(p, q, s: SupportSet, w_pq: SupportSet, w_qp: SupportSet):
    if s.is_empty():
        return None
    if not (is_complete_component(s, w_pq) and is_complete_component(s, w_qp)):
        return None
    if np.any(s.proj_x & ~w_qp.proj_x) or np.any(s.proj_z & ~w_pq.proj_z):
        return None
    return check_factorization(p, q, s)


def enumerate_complete_supports(p: FiniteCond, q: FiniteCond) -> list[SupportSet]:
    """Every complete support, found among unions of components of W_pq & W_qp."""
    return [s for s, _ in _complete_supports_with_witness(p, q)]


def _complete_supports_with_witness(p, q):
    w_pq, w_qp = candidate_sets(p, q)
    comps = _components(w_pq.mask & w_qp.mask)
    if len(comps) > MAX_COMPONENTS:
        raise ValueError(f"{len(comps)} components exceed the search cap of {MAX_COMPONENTS}")
    found = []
    seen = set()
    for r in range(1, len(comps) + 1):
        for combo in itertools.combinations(range(len(comps)), r):
            s = SupportSet(np.logical_or.reduce([comps[k] for k in combo]))
            if s in seen:
                continue
            seen.add(s)
            w = _satisfies_conditions(p, q, s, w_pq, w_qp)
            if w is not None:
                found.append((s, w))
    return found


def analyze(p: FiniteCond, q: FiniteCond) -> CompatReport:
    found = _complete_supports_with_witness(p, q)
    supports = [s for s, _ in found]
    joints = [construct_joint(q, s, w) for s, w in found]
    determinate = len(supports) == 1 and check_determinacy(supports[0])
    return CompatReport(
        compatible=bool(supports),
        complete_supports=supports,
        joints=joints,
        globally_determinate=determinate,
    )


# ---------------------------------------------------------------------------
# Dirac conditionals


def dirac_cond(f, n_x: int) -> FiniteCond:
    """p(x|z) = 1 if x == f(z)."""
    f = np.asarray(f, dtype=int)
    t = np.zeros((n_x, f.size))
    t[f, np.arange(f.size)] = 1.0
    return FiniteCond(t)


def dirac_compatible(f, nu: FiniteCond) -> int | None:
    """Smallest x0 whose preimage under ``f`` carries all of nu(.|x0).

    ``f`` maps each z-state to an x-state; ``nu`` holds nu(z|x) with shape
    (n_z, n_x).
    """
    f = np.asarray(f, dtype=int)
    if f.shape != (nu.n_x,):
        raise ValueError(f"f must map all {nu.n_x} z-states")
    for x0 in range(nu.n_z):
        if abs(nu.table[f == x0, x0].sum() - 1.0) <= COLUMN_TOL:
            return x0
    return None


def dirac_joint(x0: int, nu: FiniteCond) -> JointMatrix:
    """Joint placing x = x0 and z ~ nu(.|x0)."""
    t = np.zeros((nu.n_z, nu.n_x))
    t[x0] = nu.table[:, x0]
    return JointMatrix(t)
