"""Array-valued reverse-mode engine for the training hot loop.

Same semantics as the scalar tape but with numpy payloads, so a whole
matrix product is one graph node instead of thousands. Used by the online
trainer and the attractor synthesizer; its gradients are cross-checked
against the scalar tape in the test suite.
"""

import numpy as np


class Var:
    __slots__ = ("data", "grad", "parents", "bwd")

    def __init__(self, data, parents=(), bwd=None):
        self.data = data
        self.grad = None
        self.parents = parents
        self.bwd = bwd

    def __repr__(self):
        return f"Var({self.data!r})"


def _zeros_like(x):
    return np.zeros_like(x) if isinstance(x, np.ndarray) else 0.0


def backward(root):
    """Reverse sweep; fills .grad on every reachable Var."""
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        v, done = stack.pop()
        if done:
            topo.append(v)
            continue
        if id(v) in seen:
            continue
        seen.add(id(v))
        stack.append((v, True))
        for p in v.parents:
            if id(p) not in seen:
                stack.append((p, False))
    for v in topo:
        v.grad = _zeros_like(v.data)
    root.grad = np.ones_like(root.data) if isinstance(root.data, np.ndarray) else 1.0
    for v in reversed(topo):
        if v.bwd is not None:
            v.bwd(v.grad)


# -- ops ------------------------------------------------------------------

def leaf(data):
    return Var(np.asarray(data, dtype=float))


def add(a, b):
    out = Var(a.data + b.data, (a, b))

    def bwd(g):
        a.grad += g
        b.grad += g
    out.bwd = bwd
    return out


def sub(a, b):
    out = Var(a.data - b.data, (a, b))

    def bwd(g):
        a.grad += g
        b.grad -= g
    out.bwd = bwd
    return out


def add_const(a, c):
    out = Var(a.data + c, (a,))

    def bwd(g):
        a.grad += g
    out.bwd = bwd
    return out


def scale(a, c):
    out = Var(a.data * c, (a,))

    def bwd(g):
        a.grad += g * c
    out.bwd = bwd
    return out


def mul(a, b):
    out = Var(a.data * b.data, (a, b))

    def bwd(g):
        a.grad += g * b.data
        b.grad += g * a.data
    out.bwd = bwd
    return out


def matvec(A, x):
    out = Var(A.data @ x.data, (A, x))

    def bwd(g):
        A.grad += np.outer(g, x.data)
        x.grad += A.data.T @ g
    out.bwd = bwd
    return out


def matmul(A, B):
    out = Var(A.data @ B.data, (A, B))

    def bwd(g):
        A.grad += g @ B.data.T
        B.grad += A.data.T @ g
    out.bwd = bwd
    return out


def colscale(d, M):
    """diag(d) @ M without materializing the diagonal."""
    out = Var(d.data[:, None] * M.data, (d, M))

    def bwd(g):
        d.grad += np.sum(g * M.data, axis=1)
        M.grad += d.data[:, None] * g
    out.bwd = bwd
    return out


def tanh(x):
    y = np.tanh(x.data)
    out = Var(y, (x,))

    def bwd(g):
        x.grad += g * (1.0 - y * y)
    out.bwd = bwd
    return out


def dot(a, b):
    out = Var(float(a.data @ b.data), (a, b))

    def bwd(g):
        a.grad += g * b.data
        b.grad += g * a.data
    out.bwd = bwd
    return out


def sumsq(v):
    out = Var(float(np.sum(v.data * v.data)), (v,))

    def bwd(g):
        v.grad += (2.0 * g) * v.data
    out.bwd = bwd
    return out


def sumabs(v):
    sign = np.sign(v.data)
    out = Var(float(np.sum(np.abs(v.data))), (v,))

    def bwd(g):
        v.grad += g * sign
    out.bwd = bwd
    return out


def norm(v):
    n = float(np.sqrt(np.sum(v.data * v.data)))
    out = Var(n, (v,))

    def bwd(g):
        v.grad += (g / n) * v.data
    out.bwd = bwd
    return out


def col(M, j):
    """Column j of a matrix Var, as a vector Var."""
    out = Var(M.data[:, j].copy(), (M,))

    def bwd(g):
        M.grad[:, j] += g
    out.bwd = bwd
    return out


def divs(v, s):
    """Vector (or scalar) divided by a scalar Var."""
    out = Var(v.data / s.data, (v, s))

    def bwd(g):
        v.grad += g / s.data
        s.grad += -float(np.sum(g * v.data)) / (s.data * s.data)
    out.bwd = bwd
    return out


def log(s):
    out = Var(float(np.log(s.data)), (s,))

    def bwd(g):
        s.grad += g / s.data
    out.bwd = bwd
    return out


def absval(s):
    sign = 1.0 if s.data > 0 else (-1.0 if s.data < 0 else 0.0)
    out = Var(abs(s.data), (s,))

    def bwd(g):
        s.grad += g * sign
    out.bwd = bwd
    return out


def square(s):
    out = Var(s.data * s.data, (s,))

    def bwd(g):
        s.grad += 2.0 * g * s.data
    out.bwd = bwd
    return out


def scalev(s, v):
    """Scalar Var times vector Var."""
    out = Var(s.data * v.data, (s, v))

    def bwd(g):
        s.grad += float(np.sum(g * v.data))
        v.grad += g * s.data
    out.bwd = bwd
    return out


def relu(s):
    """max(s, 0) with subgradient 0 at 0."""
    active = 1.0 if s.data > 0 else 0.0
    out = Var(s.data * active, (s,))

    def bwd(g):
        s.grad += g * active
    out.bwd = bwd
    return out
