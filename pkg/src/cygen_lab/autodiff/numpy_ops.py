"""Plain-numpy twin of the :class:`Graph` op surface.

Model code is written once against this method set; passing numpy arrays
evaluates eagerly, passing graph nodes records a differentiable graph.
Same axis conventions as the graph: matrix and vector axes lead, batch axes
trail.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logsumexp

from .graph import Node, _matmul_fwd, _matvec_fwd, _outer_fwd, _outer_to_fwd, _solve_fwd


class NumpyOps:
    @staticmethod
    def const(v):
        return np.asarray(v, dtype=float)

    tanh = staticmethod(np.tanh)
    exp = staticmethod(np.exp)
    log = staticmethod(np.log)
    sigmoid = staticmethod(expit)

    @staticmethod
    def softplus(x):
        return np.logaddexp(0.0, x)

    @staticmethod
    def identity(x):
        return x

    stop_gradient = identity

    @staticmethod
    def square(x):
        return x * x

    @staticmethod
    def matmul(a, b):
        if a.ndim > 2:
            a, b = _pad(a, 2, b, 2)
        return _matmul_fwd(a, b)

    @staticmethod
    def transpose(a):
        return np.swapaxes(a, 0, 1)

    @staticmethod
    def sum(a, axis=None, keepdims=False):
        return np.sum(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def mean(a, axis=None, keepdims=False):
        return np.mean(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def reshape(a, shape):
        return np.reshape(a, shape)

    @staticmethod
    def broadcast_to(a, shape):
        return np.broadcast_to(a, shape)

    @staticmethod
    def index(a, key):
        return a[key]

    @staticmethod
    def concat(parts, axis=-1):
        return np.concatenate(parts, axis=axis)

    @staticmethod
    def logsumexp(a, axis=-1, keepdims=False):
        return logsumexp(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def solve(A, b):
        A, b = _pad(np.asarray(A), 2, np.asarray(b), 1)
        return _solve_fwd(A, b)

    @staticmethod
    def matvec(M, v):
        M, v = np.asarray(M), np.asarray(v)
        if M.ndim > 2:
            M, v = _pad(M, 2, v, 1)
        return _matvec_fwd(M, v)

    @staticmethod
    def outer(a, b, reduce_to=None):
        a, b = _pad(np.asarray(a), 1, np.asarray(b), 1)
        out = _outer_fwd(a, b)
        return out if reduce_to is None else _outer_to_fwd(a, b, tuple(reduce_to))

    @staticmethod
    def dot(a, b, axis=0, keepdims=False):
        return np.sum(a * b, axis=axis, keepdims=keepdims)


def _pad(a, fa, b, fb):
    na, nb = a.ndim - fa, b.ndim - fb
    if na < nb:
        a = a.reshape(a.shape[:fa] + (1,) * (nb - na) + a.shape[fa:])
    elif nb < na:
        b = b.reshape(b.shape[:fb] + (1,) * (na - nb) + b.shape[fb:])
    return a, b


NUMPY_OPS = NumpyOps()


def ops_for(*xs):
    """Graph of the first node among ``xs``, else the numpy backend."""
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    return NUMPY_OPS
