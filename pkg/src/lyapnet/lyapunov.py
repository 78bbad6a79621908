"""Finite-time Lyapunov spectrum estimation via QR accumulation.

The spectrum is computed with the Benettin recursion: propagate an
orthonormal frame through the Jacobian sequence, re-orthonormalize with
modified Gram-Schmidt every step, and average the logs of the triangular
diagonal. MGS uses only +, *, /, sqrt, so when the Jacobian entries are
tape nodes the exponents come out as tape nodes and backward reaches the
network weights. Exponents are in nats per discrete step; divide by dt for
continuous-time rates.
"""

import json
from dataclasses import dataclass

from . import scalar_ad as ad
from .scalar_ad import _value


class RankDeficiencyError(ArithmeticError):
    def __init__(self, step, column, diag):
        super().__init__(
            f"rank deficiency at step {step}, column {column}: "
            f"R_ii = {diag:.3e} below 1e-12")
        self.step = step
        self.column = column


class DivergenceError(ArithmeticError):
    def __init__(self, step, msg="trajectory diverged"):
        super().__init__(f"{msg} at step {step}")
        self.step = step


@dataclass
class SpectrumEstimate:
    exponents: list            # descending; floats or tape nodes
    horizon: int
    log_diag_history: list     # T x d floats, columns matched to exponents
    sum_exponents: object      # float or tape node

    def values(self):
        return [_value(e) for e in self.exponents]

    def to_json(self):
        chaotic, _ = is_chaotic_attractor(self)
        return json.dumps({
            "exponents": self.values(),
            "horizon": self.horizon,
            "sum": _value(self.sum_exponents),
            "chaotic": chaotic,
        })


def _mgs(A, step):
    """Modified Gram-Schmidt on columns of A (list of rows).

    Returns (Q columns, R diagonal). Norms are positive by construction,
    which fixes the QR sign convention.
    """
    d = len(A)
    cols = [[A[i][j] for i in range(d)] for j in range(d)]
    q_cols = []
    r_diag = []
    for j in range(d):
        v = cols[j]
        for q in q_cols:
            dot = sum((qi * vi for qi, vi in zip(q, v)), 0.0 * v[0])
            v = [vi - dot * qi for vi, qi in zip(v, q)]
        norm_sq = sum((vi * vi for vi in v), 0.0 * v[0])
        if _value(norm_sq) < 1e-24:
            raise RankDeficiencyError(step, j, _value(norm_sq) ** 0.5)
        norm = ad.sqrt(norm_sq)
        if _value(norm) < 1e-12:
            raise RankDeficiencyError(step, j, _value(norm))
        q_cols.append([vi / norm for vi in v])
        r_diag.append(norm)
    return q_cols, r_diag


def _matcols(J, q_cols):
    """Columns of J @ Q for Q given as columns."""
    d = len(J)
    return [[sum((J[i][k] * q[k] for k in range(d)), 0.0 * q[0])
             for i in range(d)] for q in q_cols]


def spectrum(jacobians):
    """Lyapunov spectrum of a sequence of d x d Jacobians, sorted descending."""
    jacobians = list(jacobians)
    if not jacobians:
        raise ValueError("empty Jacobian sequence")
    d = len(jacobians[0])
    q_cols = [[1.0 if i == j else 0.0 for i in range(d)] for j in range(d)]
    log_sums = [0.0] * d
    history = []
    for t, J in enumerate(jacobians):
        if len(J) != d or any(len(row) != d for row in J):
            raise ValueError(f"Jacobian at step {t} is not {d}x{d}")
        a_cols = _matcols(J, q_cols)
        A = [[a_cols[j][i] for j in range(d)] for i in range(d)]
        q_cols, r_diag = _mgs(A, t)
        logs = [ad.ln(r) for r in r_diag]
        history.append([_value(l) for l in logs])
        log_sums = [s + l for s, l in zip(log_sums, logs)]
    T = len(jacobians)
    exps = [s / T for s in log_sums]
    order = sorted(range(d), key=lambda i: _value(exps[i]), reverse=True)
    exps = [exps[i] for i in order]
    history = [[row[i] for i in order] for row in history]
    total = sum(exps[1:], exps[0])
    return SpectrumEstimate(exps, T, history, total)


def largest_exponent(dmap, x0, steps, renorm_every=1, transient=0):
    """Largest exponent via a single tangent vector.

    `dmap` provides step(x) and jacobian(x). The tangent starts as the
    first basis vector, is pushed through the Jacobians, and its log
    growth is accumulated at each renormalization.
    """
    if steps < 1 or renorm_every < 1:
        raise ValueError("steps and renorm_every must be >= 1")
    x = list(x0)
    for _ in range(transient):
        x = dmap.step(x)
    d = len(x)
    v = [1.0] + [0.0] * (d - 1)
    acc = 0.0
    for t in range(steps):
        J = dmap.jacobian(x)
        v = [sum((J[i][k] * v[k] for k in range(d)), 0.0 * J[i][0])
             for i in range(d)]
        if (t + 1) % renorm_every == 0 or t == steps - 1:
            norm_sq = sum((vi * vi for vi in v), 0.0 * v[0])
            if _value(norm_sq) < 1e-24:
                raise RankDeficiencyError(t, 0, _value(norm_sq) ** 0.5)
            norm = ad.sqrt(norm_sq)
            acc = acc + ad.ln(norm)
            v = [vi / norm for vi in v]
        x = dmap.step(x)
    return acc / steps


class NetworkMap:
    """Adapter: a square feed-forward net as a differentiable map."""

    def __init__(self, net):
        from . import network
        if net.dim_in != net.dim_out:
            raise ValueError("network is not a square map")
        self._net = net
        self._network = network

    def step(self, x):
        return self._network.forward(self._net, x)

    def jacobian(self, x):
        return self._network.input_jacobian(self._net, x)


def spectrum_of_network(net, x0, steps, transient=0):
    """Iterate x -> F(x), discard the transient, QR over the Jacobians."""
    from . import network
    if steps < 1 or transient < 0:
        raise ValueError("need steps >= 1, transient >= 0")
    m = NetworkMap(net)
    x = list(x0)
    for t in range(transient):
        x = m.step(x)
        if any(abs(_value(xi)) > 1e6 for xi in x):
            raise DivergenceError(t)
    jacobians = []
    for t in range(steps):
        y, preacts = network.forward_with_cache(net, x)
        jacobians.append(network.input_jacobian(net, x, preacts))
        x = y
        if any(abs(_value(xi)) > 1e6 for xi in x):
            raise DivergenceError(transient + t)
    return spectrum(jacobians)


def is_chaotic_attractor(s):
    """Chaos predicate: positive leading exponent, negative exponent sum."""
    lam1 = _value(s.exponents[0])
    total = _value(s.sum_exponents)
    report = {"lambda_max": lam1, "sum": total,
              "positive_leading": lam1 > 0.0, "negative_sum": total < 0.0}
    return lam1 > 0.0 and total < 0.0, report
