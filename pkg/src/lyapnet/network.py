"""Feed-forward network with an analytic, differentiable input-Jacobian.

The network is used as a discrete dynamical map x_{t+1} = F(x_t), so the
first and last layer sizes match the state dimension. Hidden layers use
tanh; the output layer is linear. The input-Jacobian is assembled as the
product W_L * D_{L-1} * W_{L-1} * ... * D_1 * W_1 with D_k the diagonal of
tanh derivatives at the cached pre-activations, so every Jacobian entry is
an ordinary tape expression and first-order backward reaches the weights.

Weights may be plain floats (fast evaluation) or scalar-tape Nodes
(training-path gradient checks); all the arithmetic here is duck-typed.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import scalar_ad as ad


@dataclass
class Network:
    layer_sizes: list
    weights: list       # per layer: (W rows-of-lists, b list)
    activation: str = "tanh"
    meta: dict = field(default_factory=dict)

    @property
    def dim_in(self):
        return self.layer_sizes[0]

    @property
    def dim_out(self):
        return self.layer_sizes[-1]


def init(layer_sizes, seed):
    """Seeded init: weights ~ N(0, 1/fan_in), biases zero."""
    layer_sizes = list(layer_sizes)
    if len(layer_sizes) < 2:
        raise ValueError(f"need at least 2 layer sizes, got {layer_sizes}")
    if any(s <= 0 for s in layer_sizes):
        raise ValueError(f"layer sizes must be positive, got {layer_sizes}")
    rng = np.random.default_rng(seed) if isinstance(seed, int) else seed
    weights = []
    for k in range(len(layer_sizes) - 1):
        fan_in, fan_out = layer_sizes[k], layer_sizes[k + 1]
        W = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_out, fan_in))
        weights.append(([list(map(float, row)) for row in W],
                        [0.0] * fan_out))
    return Network(layer_sizes, weights)


def attach(net, tape):
    """Copy of `net` whose parameters are fresh leaf nodes on `tape`."""
    weights = [([[tape.var(w) for w in row] for row in W],
                [tape.var(b) for b in bias])
               for W, bias in net.weights]
    return Network(list(net.layer_sizes), weights, net.activation)


def detach(net):
    """Values-only snapshot, safe to share across workers."""
    weights = [([[ad._value(w) for w in row] for row in W],
                [ad._value(b) for b in bias])
               for W, bias in net.weights]
    return Network(list(net.layer_sizes), weights, net.activation)


def parameter_nodes(net):
    """Flat list of parameters in layer order (W row-major, then b)."""
    out = []
    for W, b in net.weights:
        for row in W:
            out.extend(row)
        out.extend(b)
    return out


def _affine(W, b, x):
    return [sum((w * xi for w, xi in zip(row, x)), 0.0 * row[0]) + bk
            for row, bk in zip(W, b)]


def forward_with_cache(net, x):
    """Returns (output, list of hidden pre-activation vectors)."""
    if len(x) != net.dim_in:
        raise ValueError(f"input dim {len(x)} != layer size {net.dim_in}")
    preacts = []
    h = list(x)
    n_layers = len(net.weights)
    for k, (W, b) in enumerate(net.weights):
        z = _affine(W, b, h)
        if k < n_layers - 1:
            preacts.append(z)
            h = [ad.tanh(zi) for zi in z]
        else:
            h = z
    return h, preacts


def forward(net, x):
    return forward_with_cache(net, x)[0]


def _matmul(A, B):
    return [[sum((a * b for a, b in zip(row, col)), 0.0 * row[0])
             for col in zip(*B)] for row in A]


def input_jacobian(net, x, preacts=None):
    """d_out x d_in Jacobian of forward at x, entry-wise differentiable."""
    if preacts is None:
        _, preacts = forward_with_cache(net, x)
    W0, _ = net.weights[0]
    J = [list(row) for row in W0]
    for k in range(1, len(net.weights)):
        z = preacts[k - 1]
        d = [1.0 - ad.square(ad.tanh(zi)) for zi in z]
        J = [[di * e for e in row] for di, row in zip(d, J)]  # D_k * J
        W, _ = net.weights[k]
        J = _matmul(W, J)
    return J


# -- parameter snapshot serialization ------------------------------------
# Text format, bit-exact round trip: header line "sizes|activation", then
# one float per line in layer order (weights row-major, then bias).

def save_params(net, path):
    snap = detach(net)
    lines = [",".join(str(s) for s in snap.layer_sizes) + "|" + snap.activation]
    for W, b in snap.weights:
        for row in W:
            lines.extend(repr(v) for v in row)
        lines.extend(repr(v) for v in b)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    sizes_str, activation = lines[0].split("|")
    layer_sizes = [int(s) for s in sizes_str.split(",")]
    vals = iter(float(v) for v in lines[1:] if v)
    weights = []
    for k in range(len(layer_sizes) - 1):
        fan_in, fan_out = layer_sizes[k], layer_sizes[k + 1]
        W = [[next(vals) for _ in range(fan_in)] for _ in range(fan_out)]
        b = [next(vals) for _ in range(fan_out)]
        weights.append((W, b))
    return Network(layer_sizes, weights, activation)
