"""Static expression graphs with reverse-mode differentiation.

A :class:`Graph` records array-valued nodes with static shapes.  Gradients are
built by :func:`grad` as *new nodes of the same graph*, so a gradient can be
differentiated again (grad-of-grad).  Evaluation is separate from
construction: :meth:`Graph.forward` binds input values and runs a cached
execution plan over a fresh value buffer, leaving the graph untouched.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Graph",
    "Node",
    "UnboundInputError",
    "grad",
    "forward",
    "depends_on",
]


class UnboundInputError(KeyError):
    """Raised when an evaluation needs an input that was not given a value."""


class Op:
    """A primitive: numpy forward rule plus a vjp rule written in graph ops."""

    __slots__ = ("name", "fwd", "vjp")

    def __init__(self, name: str, fwd: Callable, vjp: Callable | None):
        self.name = name
        self.fwd = fwd
        self.vjp = vjp


OPS: dict[str, Op] = {}


def _register(name, fwd, vjp=None):
    OPS[name] = Op(name, fwd, vjp)


class Node:
    """One vertex of a graph.

    ``value`` is populated only for constants; evaluated values of the other
    nodes live in the buffer returned by :meth:`Graph.forward`.
    """

    __slots__ = ("graph", "id", "op", "parents", "shape", "attrs", "value", "name")

    __array_priority__ = 100  # make ndarray <op> Node dispatch to Node

    def __init__(self, graph, id_, op, parents, shape, attrs=None, value=None, name=None):
        self.graph = graph
        self.id = id_
        self.op = op
        self.parents = parents
        self.shape = shape
        self.attrs = attrs or {}
        self.value = value
        self.name = name

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node #{self.id} {self.op}{label} shape={self.shape}>"

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def is_const(self):
        return self.op == "const"

    # arithmetic sugar
    def __add__(self, other):
        return self.graph.add(self, other)

    def __radd__(self, other):
        return self.graph.add(other, self)

    def __sub__(self, other):
        return self.graph.sub(self, other)

    def __rsub__(self, other):
        return self.graph.sub(other, self)

    def __mul__(self, other):
        return self.graph.mul(self, other)

    def __rmul__(self, other):
        return self.graph.mul(other, self)

    def __truediv__(self, other):
        return self.graph.div(self, other)

    def __rtruediv__(self, other):
        return self.graph.div(other, self)

    def __neg__(self):
        return self.graph.neg(self)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)

    def __rmatmul__(self, other):
        return self.graph.matmul(other, self)

    def __getitem__(self, key):
        return self.graph.index(self, key)

    @property
    def T(self):
        return self.graph.transpose(self)


# ---------------------------------------------------------------------------
# shape helpers


def _sum_to(x, shape):
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, s in enumerate(shape) if s == 1 and x.shape[lead + i] != 1
    )
    out = np.add.reduce(x, axis=axes) if axes else x
    return out.reshape(shape)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _reduced_shape(shape, axes, keepdims):
    if keepdims:
        return tuple(1 if i in axes else s for i, s in enumerate(shape))
    return tuple(s for i, s in enumerate(shape) if i not in axes)


def _key_shape(shape, key):
    return np.empty(shape, dtype=np.int8)[key].shape


class Graph:
    """Append-only container of nodes; node ids are a topological order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: dict[str, Node] = {}
        self._plans: dict[tuple, tuple] = {}
        self._consts: dict[tuple, Node] = {}
        self._memo: dict[tuple, Node] = {}

    # -- construction primitives -------------------------------------------
    def _new(self, op, parents, shape, attrs=None, value=None, name=None):
        node = Node(self, len(self.nodes), op, tuple(parents), tuple(shape), attrs, value, name)
        self.nodes.append(node)
        return node

    def input(self, name: str, shape: Sequence[int]) -> Node:
        if name in self.inputs:
            raise ValueError(f"duplicate input name {name!r}")
        node = self._new("input", (), tuple(int(s) for s in shape), name=name)
        self.inputs[name] = node
        return node

    def const(self, value) -> Node:
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            key = ("s", float(arr))
            hit = self._consts.get(key)
            if hit is not None:
                return hit
            node = self._new("const", (), (), value=arr)
            self._consts[key] = node
            return node
        arr = arr.copy()
        arr.setflags(write=False)
        return self._new("const", (), arr.shape, value=arr)

    def zeros(self, shape) -> Node:
        shape = tuple(shape)
        key = ("z", shape)
        hit = self._consts.get(key)
        if hit is None:
            hit = self.const(np.zeros(shape)) if shape else self.const(0.0)
            self._consts[key] = hit
        return hit

    def _as_node(self, x) -> Node:
        if isinstance(x, Node):
            if x.graph is not self:
                raise ValueError("node belongs to a different graph")
            return x
        return self.const(x)

    def apply(self, op: str, parents: Sequence[Node], out_shape, **attrs) -> Node:
        parents = [self._as_node(p) for p in parents]
        if parents and all(p.is_const for p in parents):
            value = OPS[op].fwd(*[p.value for p in parents], **attrs)
            return self.const(value)
        if op in _NO_CSE:
            return self._new(op, parents, out_shape, attrs)
        # identical (op, parents, attrs) -> reuse the existing node
        key = (op, tuple(p.id for p in parents), repr(sorted(attrs.items())) if attrs else "")
        hit = self._memo.get(key)
        if hit is None:
            hit = self._new(op, parents, out_shape, attrs)
            self._memo[key] = hit
        return hit

    # -- elementwise --------------------------------------------------------
    def _binary(self, op, a, b):
        a, b = self._as_node(a), self._as_node(b)
        return self.apply(op, (a, b), np.broadcast_shapes(a.shape, b.shape))

    def add(self, a, b):
        a, b = self._as_node(a), self._as_node(b)
        shape = np.broadcast_shapes(a.shape, b.shape)
        if _is_zero(a) and b.shape == shape:
            return b
        if _is_zero(b) and a.shape == shape:
            return a
        return self._binary("add", a, b)

    def sub(self, a, b):
        a, b = self._as_node(a), self._as_node(b)
        shape = np.broadcast_shapes(a.shape, b.shape)
        if _is_zero(b) and a.shape == shape:
            return a
        if _is_zero(a) and b.shape == shape:
            return self.neg(b)
        return self._binary("sub", a, b)

    def mul(self, a, b):
        a, b = self._as_node(a), self._as_node(b)
        shape = np.broadcast_shapes(a.shape, b.shape)
        if _is_zero(a) or _is_zero(b):
            return self.zeros(shape)
        if _is_scalar_const(a, 1.0) and b.shape == shape:
            return b
        if _is_scalar_const(b, 1.0) and a.shape == shape:
            return a
        if _is_scalar_const(a, -1.0) and b.shape == shape:
            return self.neg(b)
        if _is_scalar_const(b, -1.0) and a.shape == shape:
            return self.neg(a)
        return self._binary("mul", a, b)

    def div(self, a, b):
        return self._binary("div", a, b)

    def neg(self, a):
        a = self._as_node(a)
        if a.op == "neg":
            return a.parents[0]
        return self.apply("neg", (a,), a.shape)

    def _unary(self, op, a):
        a = self._as_node(a)
        return self.apply(op, (a,), a.shape)

    def exp(self, a):
        return self._unary("exp", a)

    def log(self, a):
        return self._unary("log", a)

    def tanh(self, a):
        return self._unary("tanh", a)

    def tanh_prime(self, a):
        """Derivative of tanh, 1 - tanh(a)**2, as its own node."""
        t = self.tanh(a)
        return 1.0 - t * t

    def sigmoid(self, a):
        return self._unary("sigmoid", a)

    def softplus(self, a):
        return self._unary("softplus", a)

    def identity(self, a):
        """Alias node; differentiating w.r.t. it isolates one argument slot."""
        return self._unary("identity", a)

    def stop_gradient(self, a):
        return self._unary("stop_gradient", a)

    # -- linear algebra / shape --------------------------------------------
    def matmul(self, a, b):
        """Matrix product over the two leading axes; trailing axes are batch."""
        a, b = self._as_node(a), self._as_node(b)
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul needs operands with ndim >= 2; use matvec/dot")
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
        if a.ndim > 2:
            a, b = self._pad_batch(a, 2, b, 2)
        batch = _batch_shape(a.shape[2:], b.shape[2:])
        return self.apply("matmul", (a, b), (a.shape[0], b.shape[1]) + batch)

    def transpose(self, a):
        """Swap the two leading (matrix) axes."""
        a = self._as_node(a)
        if a.op == "transpose":
            return a.parents[0]
        shape = (a.shape[1], a.shape[0]) + a.shape[2:]
        return self.apply("transpose", (a,), shape)

    def _pad_batch(self, a, fa, b, fb):
        """Give ``a`` and ``b`` batch parts of equal rank (after ``fa``/``fb``
        feature axes) by inserting leading singleton batch axes."""
        na, nb = a.ndim - fa, b.ndim - fb
        if na < nb:
            a = self.reshape(a, a.shape[:fa] + (1,) * (nb - na) + a.shape[fa:])
        elif nb < na:
            b = self.reshape(b, b.shape[:fb] + (1,) * (na - nb) + b.shape[fb:])
        return a, b

    def sum(self, a, axis=None, keepdims=False):
        a = self._as_node(a)
        axes = _norm_axes(axis, a.ndim)
        return self.apply("sum", (a,), _reduced_shape(a.shape, axes, keepdims), axes=axes, keepdims=keepdims)

    def mean(self, a, axis=None, keepdims=False):
        a = self._as_node(a)
        axes = _norm_axes(axis, a.ndim)
        count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
        return self.sum(a, axis=axes, keepdims=keepdims) * (1.0 / count)

    def broadcast_to(self, a, shape):
        a = self._as_node(a)
        shape = tuple(shape)
        if a.shape == shape:
            return a
        np.broadcast_shapes(a.shape, shape)
        return self.apply("broadcast_to", (a,), shape, shape=shape)

    def sum_to(self, a, shape):
        a = self._as_node(a)
        shape = tuple(shape)
        if a.shape == shape:
            return a
        return self.apply("sum_to", (a,), shape, shape=shape)

    def reshape(self, a, shape):
        a = self._as_node(a)
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != int(np.prod(a.shape)):
            raise ValueError(f"cannot reshape {a.shape} to {shape}")
        if shape == a.shape:
            return a
        if a.op == "reshape":
            return self.reshape(a.parents[0], shape)
        return self.apply("reshape", (a,), shape, shape=shape)

    def index(self, a, key):
        a = self._as_node(a)
        if not isinstance(key, tuple):
            key = (key,)
        return self.apply("index", (a,), _key_shape(a.shape, key), key=key)

    def scatter(self, a, key, shape):
        """Zeros of ``shape`` with ``a`` written at ``key`` (adjoint of index)."""
        a = self._as_node(a)
        return self.apply("scatter", (a,), tuple(shape), key=key, shape=tuple(shape))

    def assemble(self, parts, keys, shape):
        """Zeros of ``shape`` with every ``parts[i]`` added at ``keys[i]``."""
        parts = [self._as_node(p) for p in parts]
        return self.apply("assemble", parts, tuple(shape), keys=tuple(keys), shape=tuple(shape))

    def concat(self, parts, axis=-1):
        parts = [self._as_node(p) for p in parts]
        ndim = parts[0].ndim
        axis = axis % ndim
        shape = list(parts[0].shape)
        shape[axis] = sum(p.shape[axis] for p in parts)
        sizes = tuple(p.shape[axis] for p in parts)
        return self.apply("concat", parts, tuple(shape), axis=axis, sizes=sizes)

    def logsumexp(self, a, axis=-1, keepdims=False):
        a = self._as_node(a)
        axes = _norm_axes(axis, a.ndim)
        return self.apply("logsumexp", (a,), _reduced_shape(a.shape, axes, keepdims), axes=axes, keepdims=keepdims)

    def solve(self, A, b):
        """``A^{-1} b`` for ``A`` (d, d, *batch) and ``b`` (d, *batch)."""
        A, b = self._as_node(A), self._as_node(b)
        d = A.shape[0]
        if A.shape[1] != d or b.shape[0] != d:
            raise ValueError(f"solve shape mismatch {A.shape}, {b.shape}")
        A, b = self._pad_batch(A, 2, b, 1)
        return self.apply("solve", (A, b), (d,) + _batch_shape(A.shape[2:], b.shape[1:]))

    # convenience built on primitives
    def dot(self, a, b, axis=0, keepdims=False):
        return self.sum(self.mul(a, b), axis=axis, keepdims=keepdims)

    def matvec(self, M, v):
        """``M @ v`` for matrices (m, n, *batch) and vectors (n, *batch).

        A plain 2-D ``M`` is shared by every batch entry of ``v``.
        """
        M, v = self._as_node(M), self._as_node(v)
        if M.ndim < 2 or M.shape[1] != v.shape[0]:
            raise ValueError(f"matvec shape mismatch {M.shape}, {v.shape}")
        if M.ndim > 2:
            M, v = self._pad_batch(M, 2, v, 1)
        shape = (M.shape[0],) + _batch_shape(M.shape[2:], v.shape[1:])
        if _is_zero(M) or _is_zero(v):
            return self.zeros(shape)
        return self.apply("matvec", (M, v), shape)

    def outer(self, a, b, reduce_to=None):
        """Outer product (m, *batch), (n, *batch) -> (m, n, *batch).

        ``reduce_to`` sums the result down to that shape (by broadcasting
        rules) inside the same primitive.
        """
        a, b = self._as_node(a), self._as_node(b)
        a, b = self._pad_batch(a, 1, b, 1)
        shape = (a.shape[0], b.shape[0]) + _batch_shape(a.shape[1:], b.shape[1:])
        target = shape if reduce_to is None else tuple(reduce_to)
        if _is_zero(a) or _is_zero(b):
            return self.zeros(target)
        if target == shape:
            return self.apply("outer", (a, b), shape)
        return self.apply("outer_to", (a, b), target, shape=target)

    def square(self, a):
        return self.mul(a, a)

    # -- evaluation ----------------------------------------------------------
    def _plan(self, outputs: tuple[Node, ...]):
        key = tuple(o.id for o in outputs)
        plan = self._plans.get(key)
        if plan is not None:
            return plan
        needed = set()
        stack = [o.id for o in outputs]
        while stack:
            i = stack.pop()
            if i in needed:
                continue
            needed.add(i)
            stack.extend(p.id for p in self.nodes[i].parents)
        order = sorted(needed)
        # last step that reads each value; buffers are dropped after it
        keep = {o.id for o in outputs}
        last_use: dict[int, int] = {}
        for i in order:
            for p in self.nodes[i].parents:
                last_use[p.id] = i
        dying: dict[int, list[int]] = {}
        for pid, i in last_use.items():
            if pid not in keep and self.nodes[pid].op not in ("const", "input"):
                dying.setdefault(i, []).append(pid)
        steps = []
        consts = []
        inputs = []
        for i in order:
            node = self.nodes[i]
            if node.op == "const":
                consts.append((i, node.value))
            elif node.op == "input":
                inputs.append(node)
            else:
                fn = OPS[node.op].fwd
                if node.attrs:
                    fn = _bind(fn, node.attrs)
                steps.append((i, fn, tuple(p.id for p in node.parents), tuple(dying.get(i, ()))))
        plan = (tuple(consts), tuple(inputs), tuple(steps))
        self._plans[key] = plan
        return plan

    def forward(self, inputs: Mapping, outputs: Node | Sequence[Node], dtype=np.float64):
        """Evaluate ``outputs`` given input bindings (keyed by node or name).

        Returns a single array when ``outputs`` is a node, else a list.
        ``dtype`` sets the working precision (inputs and constants are cast).
        """
        single = isinstance(outputs, Node)
        outs = (outputs,) if single else tuple(outputs)
        consts, needed_inputs, steps = self._plan(outs)
        dtype = np.dtype(dtype)
        if dtype != np.float64:
            consts = self._cast_consts(outs, consts, dtype)
        buf: dict[int, np.ndarray] = dict(consts)
        bound = {}
        for k, v in inputs.items():
            node = k if isinstance(k, Node) else self.inputs.get(k)
            if node is None:
                continue
            bound[node.id] = v
        for node in needed_inputs:
            try:
                val = np.asarray(bound[node.id], dtype=dtype)
            except KeyError:
                raise UnboundInputError(f"input {node.name!r} is not bound") from None
            if val.shape != node.shape:
                raise ValueError(f"input {node.name!r}: expected shape {node.shape}, got {val.shape}")
            buf[node.id] = val
        for i, fn, pids, free in steps:
            buf[i] = fn(*[buf[p] for p in pids])
            for f in free:
                del buf[f]
        if single:
            return buf[outs[0].id]
        return [buf[o.id] for o in outs]

    def _cast_consts(self, outs, consts, dtype):
        key = ("cast", tuple(o.id for o in outs), dtype.str)
        hit = self._plans.get(key)
        if hit is None:
            hit = tuple((i, v.astype(dtype)) for i, v in consts)
            self._plans[key] = hit
        return hit

    def __len__(self):
        return len(self.nodes)


def _bind(fn, attrs):
    def bound(*args):
        return fn(*args, **attrs)

    return bound


def _is_scalar_const(node: Node, v: float) -> bool:
    return node.is_const and node.shape == () and float(node.value) == v


def _is_zero(node: Node) -> bool:
    return node.is_const and not np.any(node.value)


# aliases must stay distinct even when they wrap the same node
_NO_CSE = frozenset({"identity", "stop_gradient"})


def forward(graph: Graph, inputs: Mapping, outputs):
    return graph.forward(inputs, outputs)


# ---------------------------------------------------------------------------
# reverse sweep


def depends_on(of: Node, wrt: Node) -> bool:
    """True when some path leads from ``wrt`` to ``of``."""
    if of.graph is not wrt.graph:
        return False
    seen = {wrt.id}
    for node in itertools.islice(of.graph.nodes, wrt.id, of.id + 1):
        if node.id not in seen and any(p.id in seen for p in node.parents):
            seen.add(node.id)
    return of.id in seen


def grad(of: Node, wrt: Node | Sequence[Node], seed: Node | None = None):
    """Build gradient nodes of ``of`` with respect to ``wrt``.

    ``of`` must be 0-dimensional unless a cotangent ``seed`` (same shape as
    ``of``) is supplied, in which case the vector-Jacobian product is built.
    Only paths that pass *through* each ``wrt`` node contribute, so
    differentiating w.r.t. an :meth:`Graph.identity` alias yields a partial
    derivative in that argument slot.  Returns one node per ``wrt`` (zeros
    when unreachable).
    """
    single = isinstance(wrt, Node)
    targets = [wrt] if single else list(wrt)
    g = of.graph
    if seed is None:
        if of.shape != ():
            raise ValueError(f"grad needs a scalar output or a seed, got shape {of.shape}")
        seed = g.const(1.0)
    else:
        seed = g._as_node(seed)
        if seed.shape != of.shape:
            seed = g.broadcast_to(seed, of.shape)

    target_ids = {t.id for t in targets}
    lo = min(target_ids)
    # nodes that depend on some target (restricted to ids <= of.id)
    depends = set(target_ids)
    for node in itertools.islice(g.nodes, lo, of.id + 1):
        if node.id in depends:
            continue
        if any(p.id in depends for p in node.parents):
            depends.add(node.id)
    if of.id not in depends:
        out = [g.zeros(t.shape) for t in targets]
        return out[0] if single else out

    cot: dict[int, list[Node]] = {of.id: [seed]}
    results: dict[int, Node] = {}
    for nid in range(of.id, lo - 1, -1):
        parts = cot.pop(nid, None)
        if parts is None:
            continue
        total = _accumulate(g, parts)
        if nid in target_ids:
            results[nid] = total
            # keep propagating: another target may sit upstream of this one
        node = g.nodes[nid]
        if not node.parents:
            continue
        live = [p.id in depends for p in node.parents]
        if not any(live):
            continue
        rule = OPS[node.op].vjp
        if rule is None:
            continue
        pgrads = rule(g, node, total)
        for p, pg, ok in zip(node.parents, pgrads, live):
            if ok and pg is not None:
                if pg.shape != p.shape:
                    pg = g.sum_to(pg, p.shape)
                cot.setdefault(p.id, []).append(pg)
    out = [results.get(t.id) or g.zeros(t.shape) for t in targets]
    return out[0] if single else out


def _accumulate(g: Graph, parts: list[Node]) -> Node:
    """Sum cotangent contributions, fusing disjoint scatters into one op."""
    if len(parts) == 1:
        return parts[0]
    scat = [p for p in parts if p.op == "scatter"]
    rest = [p for p in parts if p.op != "scatter"]
    if len(scat) > 1 and len({p.shape for p in scat}) == 1:
        total = g.assemble([p.parents[0] for p in scat], [p.attrs["key"] for p in scat], scat[0].shape)
    elif scat:
        rest = parts
        total = None
    else:
        total = None
    for extra in rest:
        total = extra if total is None else g.add(total, extra)
    return total


# ---------------------------------------------------------------------------
# primitive table


def _unb(g, x, shape):
    return g.sum_to(x, shape) if x.shape != shape else x


def _vjp_add(g, n, ct):
    a, b = n.parents
    return _unb(g, ct, a.shape), _unb(g, ct, b.shape)


def _vjp_sub(g, n, ct):
    a, b = n.parents
    return _unb(g, ct, a.shape), _unb(g, g.neg(ct), b.shape)


def _vjp_mul(g, n, ct):
    a, b = n.parents
    return _unb(g, g.mul(ct, b), a.shape), _unb(g, g.mul(ct, a), b.shape)


def _vjp_div(g, n, ct):
    a, b = n.parents
    ga = g.div(ct, b)
    gb = g.neg(g.mul(ga, n))
    return _unb(g, ga, a.shape), _unb(g, gb, b.shape)


def _sigmoid_any(x):
    return expit(x)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _unb_feat(g, x, shape, nfeat):
    """Reduce a cotangent to ``shape`` when the primal had no batch axes."""
    if len(shape) == nfeat and x.ndim > nfeat:
        x = g.sum(x, axis=tuple(range(nfeat, x.ndim)))
    return _unb(g, x, shape)


def _batch_shape(a, b):
    return tuple(np.broadcast_shapes(tuple(a), tuple(b)))


def _matmul_vjp(g, n, ct):
    a, b = n.parents
    ga = g.matmul(ct, g.transpose(b))
    gb = g.matmul(g.transpose(a), ct)
    return _unb_feat(g, ga, a.shape, 2), _unb_feat(g, gb, b.shape, 2)


def _matmul_fwd(a, b):
    if a.ndim == 2 and b.ndim == 2:
        return a @ b
    if a.ndim == 2:
        return np.tensordot(a, b, axes=(1, 0))
    k = a.shape[1]
    if k > 8:
        am = np.moveaxis(a, (0, 1), (-2, -1))
        bm = np.moveaxis(b, (0, 1), (-2, -1))
        return np.moveaxis(np.matmul(am, bm), (-2, -1), (0, 1))
    # unrolled over the short contraction axis; inner loops run over batch
    out = a[:, 0][:, None] * b[0][None]
    for j in range(1, k):
        out = out + a[:, j][:, None] * b[j][None]
    return out


def _sum_fwd(x, axes, keepdims):
    return np.sum(x, axis=axes, keepdims=keepdims)


def _sum_vjp(g, n, ct):
    (a,) = n.parents
    if not n.attrs["keepdims"]:
        ct = g.reshape(ct, _reduced_shape(a.shape, n.attrs["axes"], True))
    return (g.broadcast_to(ct, a.shape),)


def _lse_fwd(x, axes, keepdims):
    m = np.max(x, axis=axes, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axes, keepdims=True)) + m
    if not keepdims:
        out = np.squeeze(out, axis=axes)
    return out


def _lse_vjp(g, n, ct):
    (a,) = n.parents
    kshape = _reduced_shape(a.shape, n.attrs["axes"], True)
    lse = g.reshape(n, kshape) if not n.attrs["keepdims"] else n
    ct = g.reshape(ct, kshape) if not n.attrs["keepdims"] else ct
    w = g.exp(g.sub(a, lse))
    return (g.mul(w, ct),)


def _index_fwd(x, key):
    return x[key]


def _scatter_fwd(x, key, shape):
    out = np.zeros(shape, dtype=x.dtype)
    out[key] = x
    return out


def _assemble_fwd(*xs, keys, shape):
    out = np.zeros(shape, dtype=xs[0].dtype)
    for x, key in zip(xs, keys):
        out[key] += x
    return out


def _concat_vjp(g, n, ct):
    axis = n.attrs["axis"]
    outs = []
    start = 0
    for p, size in zip(n.parents, n.attrs["sizes"]):
        key = tuple(slice(None) for _ in range(axis)) + (slice(start, start + size),)
        outs.append(g.index(ct, key))
        start += size
    return outs


def _matvec_fwd(M, v):
    if M.ndim == 2:
        return np.tensordot(M, v, axes=(1, 0))
    n = M.shape[1]
    if n > 8:
        Mm = np.moveaxis(M, (0, 1), (-2, -1))
        return np.moveaxis(np.matmul(Mm, np.moveaxis(v, 0, -1)[..., None])[..., 0], -1, 0)
    out = M[:, 0] * v[0]
    for j in range(1, n):
        out = out + M[:, j] * v[j]
    return out


def _matvec_vjp(g, n, ct):
    M, v = n.parents
    gv = g.matvec(g.transpose(M), ct)
    return g.outer(ct, v, reduce_to=M.shape), _unb_feat(g, gv, v.shape, 1)


def _outer_fwd(a, b):
    return a[:, None] * b[None]


def _outer_to_fwd(a, b, shape):
    if len(shape) == 2:
        axes = tuple(range(1, a.ndim))
        return np.tensordot(a, b, axes=(axes, axes)).reshape(shape)
    return _sum_to(a[:, None] * b[None], shape)


def _outer_vjp(g, n, ct):
    a, b = n.parents
    ga = g.matvec(ct, b)
    gb = g.matvec(g.transpose(ct), a)
    return _unb_feat(g, ga, a.shape, 1), _unb_feat(g, gb, b.shape, 1)


def _solve_fwd(A, b):
    Am = np.moveaxis(A, (0, 1), (-2, -1))
    bm = np.moveaxis(b, 0, -1)[..., None]
    return np.moveaxis(np.linalg.solve(Am, bm)[..., 0], -1, 0)


def _solve_vjp(g, n, ct):
    A, b = n.parents
    gb = g.solve(g.transpose(A), ct)
    gA = g.neg(g.outer(gb, n, reduce_to=A.shape))
    return gA, _unb_feat(g, gb, b.shape, 1)


_register("add", np.add, _vjp_add)
_register("sub", np.subtract, _vjp_sub)
_register("mul", np.multiply, _vjp_mul)
_register("div", np.divide, _vjp_div)
_register("neg", np.negative, lambda g, n, ct: (g.neg(ct),))
_register("exp", np.exp, lambda g, n, ct: (g.mul(ct, n),))
_register("log", np.log, lambda g, n, ct: (g.div(ct, n.parents[0]),))
_register("tanh", np.tanh, lambda g, n, ct: (g.mul(ct, g.sub(1.0, g.mul(n, n))),))
_register("sigmoid", _sigmoid_any, lambda g, n, ct: (g.mul(ct, g.mul(n, g.sub(1.0, n))),))
_register("softplus", _softplus, lambda g, n, ct: (g.mul(ct, g.sigmoid(n.parents[0])),))
_register("identity", lambda x: x, lambda g, n, ct: (ct,))
_register("stop_gradient", lambda x: x, lambda g, n, ct: (None,))
_register("matmul", _matmul_fwd, _matmul_vjp)
_register("transpose", lambda x: np.swapaxes(x, 0, 1), lambda g, n, ct: (g.transpose(ct),))
_register("sum", _sum_fwd, _sum_vjp)
_register(
    "broadcast_to",
    lambda x, shape: np.broadcast_to(x, shape),
    lambda g, n, ct: (g.sum_to(ct, n.parents[0].shape),),
)
_register("sum_to", lambda x, shape: _sum_to(x, shape), lambda g, n, ct: (g.broadcast_to(ct, n.parents[0].shape),))
_register("reshape", lambda x, shape: np.reshape(x, shape), lambda g, n, ct: (g.reshape(ct, n.parents[0].shape),))
_register("index", _index_fwd, lambda g, n, ct: (g.scatter(ct, n.attrs["key"], n.parents[0].shape),))
_register("scatter", _scatter_fwd, lambda g, n, ct: (g.index(ct, n.attrs["key"]),))
_register("concat", lambda *xs, axis, sizes: np.concatenate(xs, axis=axis), _concat_vjp)
_register("logsumexp", _lse_fwd, _lse_vjp)
_register("solve", _solve_fwd, _solve_vjp)
_register("matvec", _matvec_fwd, _matvec_vjp)
_register("assemble", _assemble_fwd, lambda g, n, ct: [g.index(ct, k) for k in n.attrs["keys"]])
_register("outer", _outer_fwd, _outer_vjp)
_register("outer_to", _outer_to_fwd, _outer_vjp)


def all_ops() -> Iterable[str]:
    return sorted(OPS)
