"""Reverse-mode automatic differentiation on a scalar tape.

All values are double precision. Nodes are appended to a tape during the
forward pass, so parents always precede children and the backward sweep is
a single reverse pass over node ids. The tape can be truncated back to a
checkpoint between optimizer steps so the online loop does not grow it
without bound.
"""

import math


class DomainError(ValueError):
    """Raised when a primitive is evaluated outside its domain."""


class GradientError(ArithmeticError):
    """Raised when backward produces a non-finite gradient."""


class Tape:
    __slots__ = ("values", "parents", "grads")

    def __init__(self):
        self.values = []
        self.parents = []   # per node: tuple of (parent_id, local_partial)
        self.grads = None

    def __len__(self):
        return len(self.values)

    def _append(self, value, parents):
        self.values.append(value)
        self.parents.append(parents)
        return Node(self, len(self.values) - 1)

    def var(self, value):
        """New leaf node (parameter or input)."""
        return self._append(float(value), ())

    def checkpoint(self):
        return len(self.values)

    def truncate(self, checkpoint):
        """Drop every node at or above `checkpoint`. Nodes below stay valid."""
        if checkpoint < 0 or checkpoint > len(self.values):
            raise ValueError(f"bad checkpoint {checkpoint}")
        del self.values[checkpoint:]
        del self.parents[checkpoint:]
        self.grads = None

    def backward(self, root):
        """Accumulate d(root)/d(node) for every node up to root.

        Returns the gradient list indexed by node id; Node.grad reads it.
        """
        if root.tape is not self:
            raise ValueError("root lives on a different tape")
        n = root.idx + 1
        grads = [0.0] * n
        grads[root.idx] = 1.0
        values = self.values
        parents = self.parents
        for i in range(root.idx, -1, -1):
            g = grads[i]
            if g == 0.0:
                continue
            if g != g:  # NaN
                raise GradientError(f"NaN gradient at node {i} (value {values[i]})")
            for j, p in parents[i]:
                grads[j] += g * p
        self.grads = grads
        return grads


class Node:
    __slots__ = ("tape", "idx")

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape.values[self.idx]

    @property
    def grad(self):
        grads = self.tape.grads
        if grads is None or self.idx >= len(grads):
            return 0.0
        return grads[self.idx]

    def __repr__(self):
        return f"Node({self.value})"

    # -- primitives -------------------------------------------------------

    def _binary(self, other, fwd, partials):
        t = self.tape
        if isinstance(other, Node):
            a, b = self.value, other.value
            pa, pb = partials(a, b)
            return t._append(fwd(a, b), ((self.idx, pa), (other.idx, pb)))
        a, b = self.value, float(other)
        pa, _ = partials(a, b)
        return t._append(fwd(a, b), ((self.idx, pa),))

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b, lambda a, b: (1.0, 1.0))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b, lambda a, b: (1.0, -1.0))

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        return self._binary(other, lambda a, b: a * b, lambda a, b: (b, a))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        b = other.value if isinstance(other, Node) else float(other)
        if b == 0.0:
            raise DomainError("division by zero")
        return self._binary(other, lambda a, b: a / b,
                            lambda a, b: (1.0 / b, -a / (b * b)))

    def __rtruediv__(self, other):
        if self.value == 0.0:
            raise DomainError("division by zero")
        a = float(other)
        v = self.value
        return self.tape._append(a / v, ((self.idx, -a / (v * v)),))

    def __neg__(self):
        return self.tape._append(-self.value, ((self.idx, -1.0),))


def _value(x):
    return x.value if isinstance(x, Node) else float(x)


def tanh(x):
    if isinstance(x, Node):
        y = math.tanh(x.value)
        return x.tape._append(y, ((x.idx, 1.0 - y * y),))
    return math.tanh(x)


def exp(x):
    if isinstance(x, Node):
        y = math.exp(x.value)
        return x.tape._append(y, ((x.idx, y),))
    return math.exp(x)


def ln(x):
    v = _value(x)
    if v <= 0.0:
        raise DomainError(f"ln of non-positive value {v}")
    if isinstance(x, Node):
        return x.tape._append(math.log(v), ((x.idx, 1.0 / v),))
    return math.log(v)


def sqrt(x):
    v = _value(x)
    if v <= 0.0:
        raise DomainError(f"sqrt of non-positive value {v}")
    if isinstance(x, Node):
        y = math.sqrt(v)
        return x.tape._append(y, ((x.idx, 0.5 / y),))
    return math.sqrt(v)


def absval(x):
    # subgradient 0 at x = 0, so a regularizer sitting at its optimum stays put
    if isinstance(x, Node):
        v = x.value
        p = 1.0 if v > 0.0 else (-1.0 if v < 0.0 else 0.0)
        return x.tape._append(abs(v), ((x.idx, p),))
    return abs(x)


def square(x):
    if isinstance(x, Node):
        v = x.value
        return x.tape._append(v * v, ((x.idx, 2.0 * v),))
    return x * x


def maximum(a, b):
    va, vb = _value(a), _value(b)
    if isinstance(a, Node) or isinstance(b, Node):
        tape = a.tape if isinstance(a, Node) else b.tape
        parents = []
        if va >= vb:
            if isinstance(a, Node):
                parents.append((a.idx, 1.0))
        else:
            if isinstance(b, Node):
                parents.append((b.idx, 1.0))
        return tape._append(max(va, vb), tuple(parents))
    return max(va, vb)


def backward(root):
    return root.tape.backward(root)


def finite_diff_check(f, p, h):
    """Compare an analytic gradient against central differences.

    `f` maps a list of floats to (value, gradient_list), with the gradient
    computed analytically (e.g. via a tape). Returns the max over
    coordinates of |analytic - central| / max(1, |central|).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    p = [float(x) for x in p]
    _, grad = f(p)
    worst = 0.0
    for i in range(len(p)):
        hi = list(p)
        lo = list(p)
        hi[i] += h
        lo[i] -= h
        fhi, _ = f(hi)
        flo, _ = f(lo)
        if not (math.isfinite(fhi) and math.isfinite(flo)):
            raise ArithmeticError(f"non-finite f at coordinate {i}")
        central = (fhi - flo) / (2.0 * h)
        err = abs(grad[i] - central) / max(1.0, abs(central))
        worst = max(worst, err)
    return worst
